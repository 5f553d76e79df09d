"""Entity-guided contrastive augmentation and training for robust
knowledge-grounded dialogue.

Pipeline: prepare a corpus -> train knowledge-graph embeddings ->
augment with positive/negative samples -> train the dialogue model with
a joint generation + contrastive objective -> generate / evaluate,
optionally under controlled input perturbations.
"""

__version__ = "0.1.0"
