"""Company record-linkage engine.

Preprocesses a reference dataset into an in-memory entity store plus a
MinHash blocking index, then links incoming query records via candidate
retrieval and a hierarchical multi-attribute scoring tree.
"""

__version__ = "0.1.0"
