"""Label-conditioned variational paraphrase generation (DVPG) toolkit."""

__version__ = "0.1.0"
