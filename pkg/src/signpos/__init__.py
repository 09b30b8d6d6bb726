"""Traffic-sign triangulation from monocular detections, GPS and external camera poses."""

__version__ = "0.1.0"
