"""Joint channel-and-data estimation for massive-MIMO uplinks with
low-resolution ADCs: BiG-AMP receivers, a pilot-only baseline, replica
predictions and a reproducible Monte-Carlo harness."""

__version__ = "0.1.0"
