"""IoT hub middleware: typed composable feeds, pub/sub dataflow, and meta-hub federation."""

__version__ = "0.1.0"
