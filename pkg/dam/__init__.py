import logging
import os
from dataclasses import dataclass

import numpy as np
from dotenv import load_dotenv
from threadpoolctl import threadpool_limits

from dam.config import RunConfig, load_config

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

# Fixed spawn keys so every subsystem gets its own stream from the one root seed
SUBSYSTEMS = ('data', 'model', 'train', 'eval', 'forecast', 'impute')


def configure_logging(level=None):
    logger = logging.getLogger('dam')
    if logger.handlers and level is None:
        return logger
    level = (level or os.getenv('DAM_LOG_LEVEL', 'INFO')).upper()
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
    logger.setLevel(getattr(logging, level, logging.INFO))
    return logger


@dataclass
class DamApp:
    """Runtime of one command: resolved configuration and per-subsystem seeded generators"""
    config: RunConfig
    out_dir: str
    debug: bool = False
    threads: int = None

    def rng(self, subsystem):
        """Independent generator of a named subsystem"""
        if subsystem not in SUBSYSTEMS:
            raise KeyError(f"unknown subsystem '{subsystem}'")
        key = SUBSYSTEMS.index(subsystem)
        return np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=(key,)))

    @property
    def seed_manifest(self):
        return {'root_seed': self.config.seed, 'spawn_keys': {name: [i] for i, name in enumerate(SUBSYSTEMS)}}


def create_app(config_path=None, overrides=None):
    """
    Build the runtime for a command

    Loads .env, configures logging, caps BLAS threads (DAM_NUM_THREADS),
    switches debug NaN checks on (DAM_DEBUG) and resolves the RunConfig.

    Args:
        config_path: optional JSON run configuration
        overrides: dotted-key overrides, e.g. {'eval.sigma': 360}

    Returns:
        DamApp
    """
    load_dotenv()
    logger = configure_logging()

    threads = os.getenv('DAM_NUM_THREADS')
    if threads:
        threadpool_limits(limits=int(threads))
        logger.debug(f"Limited numerical libraries to {threads} thread(s)")

    debug = os.getenv('DAM_DEBUG', '').lower() in ('1', 'true', 'yes')
    if debug:
        from dam.ml.autograd import set_debug
        set_debug(True)

    overrides = dict(overrides or {})
    if overrides.get('out') is None and os.getenv('DAM_OUT_DIR'):
        overrides['out'] = os.getenv('DAM_OUT_DIR')
    config = load_config(config_path, overrides)
    return DamApp(config=config, out_dir=config.out, debug=debug,
                  threads=int(threads) if threads else None)
