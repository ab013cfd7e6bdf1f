"""Track building and match completion.

Tracks are connected components of the keypoint match graph. A track
that contains two keypoints of the same image is self-inconsistent and
dropped entirely. Completion turns every track into the full set of
pairwise cross-image correspondences.
"""

from collections import defaultdict

import numpy as np

from .model import GeometryClass, ImagePairMatches, MatchSet, TrackSet


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, a):
        parent = self.parent
        if a not in parent:
            parent[a] = a
            return a
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def build_tracks(match_set):
    """Union-find over (image, keypoint) nodes joined by correspondences."""
    uf = _UnionFind()
    for pair in match_set.pairs:
        for ki, kj in pair.correspondences:
            uf.union((pair.i, int(ki)), (pair.j, int(kj)))
    groups = defaultdict(list)
    for node in list(uf.parent):
        groups[uf.find(node)].append(node)
    tracks = []
    for members in groups.values():
        if len(members) < 2:
            continue
        images = [im for im, _ in members]
        if len(set(images)) != len(images):
            continue  # same-image conflict: drop the whole track
        tracks.append(sorted(members))
    tracks.sort()
    return TrackSet(tracks=tracks)


def complete_matches(track_set, match_set, max_track_size=200):
    """Add all pairwise correspondences implied by track transitivity.

    Existing correspondences are preserved; new ones are marked as
    synthetic. Tracks above ``max_track_size`` keep only their original
    edges. Idempotent.
    """
    existing = {}
    for pair in match_set.pairs:
        existing[(pair.i, pair.j)] = set(map(tuple, pair.correspondences.tolist()))

    new_corrs = defaultdict(set)
    for members in track_set.tracks:
        if len(members) > max_track_size:
            continue
        for a in range(len(members)):
            ia, ka = members[a]
            for b in range(a + 1, len(members)):
                ib, kb = members[b]
                if ia < ib:
                    key, corr = (ia, ib), (ka, kb)
                else:
                    key, corr = (ib, ia), (kb, ka)
                if corr not in existing.get(key, ()):
                    new_corrs[key].add(corr)

    pairs = []
    for pair in match_set.pairs:
        added = new_corrs.pop((pair.i, pair.j), None)
        if not added:
            pairs.append(pair)
            continue
        corr = np.concatenate([
            pair.correspondences.reshape(-1, 2),
            np.array(sorted(added), dtype=np.int64),
        ])
        pairs.append(ImagePairMatches(
            i=pair.i, j=pair.j, geometry_class=pair.geometry_class,
            correspondences=corr,
            synthetic_from_tracks=pair.synthetic_from_tracks))
    for (i, j) in sorted(new_corrs):
        corr = np.array(sorted(new_corrs[(i, j)]), dtype=np.int64)
        pairs.append(ImagePairMatches(
            i=i, j=j, geometry_class=GeometryClass.FUNDAMENTAL,
            correspondences=corr, synthetic_from_tracks=True))
    pairs.sort(key=lambda p: (p.i, p.j))
    return MatchSet(images=match_set.images, keypoints=match_set.keypoints,
                    pairs=pairs)
