"""Learning to bid in repeated first-price auctions when the value of
winning is itself unknown and must be estimated."""

__version__ = "0.1.0"
