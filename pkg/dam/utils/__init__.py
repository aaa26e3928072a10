from dam.utils.checkpoint import save_checkpoint, load_checkpoint
from dam.utils.data_loader import Dataset, load_csv, load_manifest

__all__ = ['save_checkpoint', 'load_checkpoint', 'Dataset', 'load_csv', 'load_manifest']
