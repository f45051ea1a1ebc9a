"""gardenctl: a content-addressed, multi-version software garden."""

from gardenctl.hashname import HashName, parse_hash_name

__version__ = "0.1.0"
__all__ = ["HashName", "parse_hash_name", "__version__"]
