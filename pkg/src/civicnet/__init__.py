"""civicnet: a desk-scale decentralized network for consent-based citizen document exchange."""

__version__ = "0.1.0"
