"""Table-grounded retrieval-augmented generation over noisy support dialogues."""

__version__ = "0.1.0"
