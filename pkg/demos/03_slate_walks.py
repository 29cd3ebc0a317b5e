"""Watch a biased random walk converge toward its target collection.

Each turn samples a typed collection near the current user vector, then
moves the user vector to the unit-norm combination closest to the target.
A positive combination weight routes the collection itself into the slate
("more"); a non-positive one rebuilds the slate from item neighbors
("less").
"""

import numpy as np

from slatewalk import corpus, embedder, seqgen

corp = corpus.derive_artist_collections(
    corpus.make_fixture_corpus(400, 40, seed=7))
params = embedder.train_dual_encoder(
    corp, embedder.TrainConfig(dim=16, steps=300, batch_size=32))
coll_index = embedder.index_corpus_collections(params, corp)
item_index = embedder.index_corpus_items(params, corp)

cfg = seqgen.WalkConfig(turns=6)
walk = seqgen.generate_sequence(corp, coll_index, item_index, cfg,
                                np.random.default_rng(20))

target = corp.collections[walk.target_collection]
print(f"target collection: {target.title!r} ({walk.target_collection})")
print(f"initial target similarity: "
      f"{float(walk.user_vecs[0] @ walk.target_vec):+.3f}\n")

for t, turn in enumerate(walk.turns, start=1):
    coll = corp.collections[turn.source_collection]
    sim = float(walk.user_vecs[t] @ walk.target_vec)
    print(f"turn {t}: [{turn.ptype:4s}] sampled {coll.title!r} "
          f"(alpha={turn.alpha:+.2f}, beta={turn.beta:+.2f})")
    print(f"         slate of {len(turn.slate)}, "
          f"target similarity now {sim:+.3f}")

print("\nsimilarity to the target never decreases: that is the point of the")
print("closed-form weight solve (staying put is always a feasible choice).")

# The solver in isolation.
rng = np.random.default_rng(0)
r, z, r_star = (v / np.linalg.norm(v) for v in rng.normal(size=(3, 8)))
sol = seqgen.solve_weights(r, z, r_star)
combo = sol.alpha * r + sol.beta * z
print(f"\nstandalone solve: alpha={sol.alpha:+.3f} beta={sol.beta:+.3f} "
      f"|combo|={np.linalg.norm(combo):.9f} objective={combo @ r_star:+.4f} "
      f"(staying put would give {r @ r_star:+.4f})")
