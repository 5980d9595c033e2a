"""Import root for `src.stonemark`."""
__all__ = ["stonemark"]
