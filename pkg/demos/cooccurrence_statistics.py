"""
Label co-occurrence from dense annotations
==========================================

Turn interval annotations into per-frame label sets and count how often
every pair of classes is active in the same frame.
"""

import tempfile
from pathlib import Path

from cornet.annotations import (AnnotationSequence, ClassVocabulary, build_cooccurrence, corpus_cooccurrence,
                                dataset_stats, to_dense_targets)

vocab = ClassVocabulary(("open door", "walk", "talk on phone"))

# Intervals are half-open [start, end) with a class index.
videos = [
    AnnotationSequence("clip_a", 8, ((0, 3, 0), (1, 8, 1), (4, 7, 2))),
    AnnotationSequence("clip_b", 5, ((0, 5, 1), (0, 5, 2))),
]

# Frame-by-class targets for the first clip.
print(to_dense_targets(videos[0], vocab).astype(int))

# The diagonal counts frames per class, off-diagonal entries count shared frames.
r = build_cooccurrence(videos[0], vocab)
print(r.values.astype(int))

# Per-video matrices add up to the corpus matrix.
total = corpus_cooccurrence(videos, vocab)
print((build_cooccurrence(videos[0], vocab) + build_cooccurrence(videos[1], vocab)).values
      .tolist() == total.values.tolist())

stats = dataset_stats(videos, vocab)
print(f"labels per frame {stats.labels_per_frame:.3f}, classes per video {stats.classes_per_video:.1f}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "cooc.csv"
    total.to_csv(path, vocab)
    print(path.read_text())
