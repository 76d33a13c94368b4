"""Label IoT devices with vendor and function from passively observed traffic features."""

__version__ = "0.1.0"
