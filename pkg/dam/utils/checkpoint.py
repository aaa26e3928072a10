import dataclasses
import json
import logging
import os

import numpy as np

from dam.config import ModelConfig
from dam.errors import ModelError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
FORMAT_VERSION = 1
_DTYPES = {'float32': '<f4', 'float64': '<f8'}


def _payload_name(name):
    return name.replace('/', '_') + '.bin'


def _write_tensor(directory, name, array, dtype):
    filename = _payload_name(name)
    np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tofile(os.path.join(directory, filename))
    return {'name': name, 'shape': list(array.shape), 'file': filename}


def _read_tensor(directory, entry, dtype):
    path = os.path.join(directory, entry['file'])
    expected = int(np.prod(entry['shape'], dtype=np.int64))
    data = np.fromfile(path, dtype=_DTYPES[dtype])
    if data.size != expected:
        raise ModelError(f"payload {entry['file']} holds {data.size} values, manifest says {expected}")
    return data.reshape(entry['shape'])


def save_checkpoint(model, directory, step=None, optimizer=None, extra=None):
    """
    Write a checkpoint directory: manifest.json plus one raw little-endian file per tensor

    Args:
        model: DamModel
        directory: created if missing
        step: training step recorded in the manifest
        optimizer: optional Adam whose moments are stored alongside
        extra: additional JSON-serialisable manifest fields

    Returns:
        path of the manifest
    """
    os.makedirs(directory, exist_ok=True)
    state = model.state_dict()
    dtype = np.dtype(next(iter(state.values())).dtype).name
    if dtype not in _DTYPES:
        raise ModelError(f"unsupported parameter precision {dtype}")
    manifest = {
        'format_version': FORMAT_VERSION,
        'step': step,
        'dtype': dtype,
        'byte_order': 'little',
        'model_config': dataclasses.asdict(model.config),
        'frequency_set_version': model.spec.version,
        'tensors': [_write_tensor(directory, name, value, dtype) for name, value in state.items()],
    }
    if optimizer is not None:
        opt_state = optimizer.state_dict()
        manifest['optimizer'] = {
            'step_count': opt_state['step_count'],
            'tensors': [_write_tensor(directory, f"adam.{kind}.{name}", value, dtype)
                        for kind in ('m', 'v') for name, value in opt_state[kind].items()],
        }
    if extra:
        manifest.update(extra)
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, 'w') as fh:
        json.dump(manifest, fh, indent=2)
    logger.info(f"Saved checkpoint (step {step}) to {directory}")
    return path


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ModelError(f"cannot read checkpoint manifest {path}: {e}") from None


def load_checkpoint(directory):
    """
    Rebuild a DamModel from a checkpoint directory

    Shapes are validated against the ModelConfig stored in the manifest and
    the frequency set version must match the one in this package.

    Returns:
        (model, manifest)
    """
    from dam.ml.autograd import precision
    from dam.ml.basis import build_frequency_set
    from dam.ml.network import DamModel

    manifest = read_manifest(directory)
    if manifest.get('format_version') != FORMAT_VERSION:
        raise ModelError(f"unsupported checkpoint format {manifest.get('format_version')}")
    spec = build_frequency_set()
    if manifest['frequency_set_version'] != spec.version:
        raise ModelError(f"checkpoint frequency set {manifest['frequency_set_version']} != {spec.version}")
    dtype = manifest['dtype']
    if dtype not in _DTYPES:
        raise ModelError(f"unsupported checkpoint precision {dtype}")
    with precision(np.dtype(dtype).type):
        model = DamModel(ModelConfig(**manifest['model_config']), spec=spec)
    model.load_state_dict({e['name']: _read_tensor(directory, e, dtype) for e in manifest['tensors']})

    logger.info(f"Loaded checkpoint from {directory} (step {manifest.get('step')})")
    return model, manifest


def load_optimizer_state(directory, optimizer, manifest=None):
    """Restore Adam moments saved next to the model; returns False when the checkpoint has none"""
    manifest = manifest or read_manifest(directory)
    if 'optimizer' not in manifest:
        return False
    moments = {'m': {}, 'v': {}}
    for entry in manifest['optimizer']['tensors']:
        _, kind, name = entry['name'].split('.', 2)
        moments[kind][name] = _read_tensor(directory, entry, manifest['dtype'])
    optimizer.load_state_dict({'step_count': manifest['optimizer']['step_count'], **moments})
    return True
