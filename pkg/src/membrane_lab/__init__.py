"""Monte Carlo laboratory for diffusions crossing semipermeable, sticky membranes."""
__version__ = "0.1.0"
