from dam.ml.network import DamModel
from dam.ml.evaluation import ModelForecaster, ThetaZeroForecaster, evaluate_forecast
from dam.ml.training import train, finetune

__all__ = ['DamModel', 'ModelForecaster', 'ThetaZeroForecaster', 'evaluate_forecast', 'train', 'finetune']
