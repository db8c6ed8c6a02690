"""Mobile-app fingerprinting from sniffed 5G PDCCH DCI traces, on synthetic data."""

__version__ = "0.1.0"
