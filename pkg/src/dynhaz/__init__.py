"""dynhaz: dynamic hazard estimation for discrete-time survival data."""

__version__ = "0.1.0"
