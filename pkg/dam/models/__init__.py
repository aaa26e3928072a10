from dam.models.series import TimeValueSeries, DatasetSplit, TimeUnitConfig
from dam.models.hsr import HsrConfig, HsrDraw
from dam.models.basis import BasisSpec, RobustNorm, CoefficientVector, AffineParams, ForecastFunction

__all__ = ['TimeValueSeries', 'DatasetSplit', 'TimeUnitConfig', 'HsrConfig', 'HsrDraw',
           'BasisSpec', 'RobustNorm', 'CoefficientVector', 'AffineParams', 'ForecastFunction']
