"""Supply-chain maintenance toolkit for enclave-ported libraries."""

__version__ = "0.1.0"
