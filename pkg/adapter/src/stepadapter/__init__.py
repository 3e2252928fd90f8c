"""Line-JSON reaction-table predictor adapter."""

from stepadapter.serve import AdapterConfig, load_table, main, serve

__all__ = ["AdapterConfig", "load_table", "main", "serve"]
