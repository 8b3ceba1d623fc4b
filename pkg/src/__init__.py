"""Face-filter robustness benchmark modules."""
