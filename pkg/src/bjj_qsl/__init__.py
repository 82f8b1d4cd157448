"""Speed-limit and optimal-control toolkit for state transfer in a bosonic Josephson junction."""

__version__ = "0.1.0"
