from .config import ConfigFile, load_config
from .payloads import Operations, canon_json

__all__ = ["ConfigFile", "load_config", "Operations", "canon_json"]
