"""Simulate live pairwise evaluation sessions with team-draft interleaving.

Two stub systems answer every query; their slates are merged into one
combined slate with hidden team labels. A simulated user likes items from
a fixed taste set; closed sessions reveal per-team credit, and the pooled
credits get a paired sign-flip permutation test.
"""

import numpy as np

from slatewalk import corpus, interactive

corp = corpus.make_fixture_corpus(120, 12, seed=3)
ids = sorted(corp.items)

# System "sharp" ranks the user's actual taste first; "fuzzy" shuffles.
taste = set(ids[:15])
rng = np.random.default_rng(0)


def sharp(history, query):
    return sorted(ids, key=lambda i: (i not in taste, i))


def fuzzy(history, query):
    out = list(ids)
    np.random.default_rng(abs(hash(query)) % 2**32).shuffle(out)
    return out


service = interactive.EvalService(
    {"sharp": sharp, "fuzzy": fuzzy}, ("sharp", "fuzzy"), corp,
    config=interactive.SessionConfig(min_rounds=5, slate_size=10), seed=1,
)

reports = []
for user in range(6):
    session = service.create_session()
    for round_no in range(5):
        items = service.post_utterance(
            session.id, f"user {user} wants more energetic songs round {round_no}")
        ratings = {e["item_id"]: ("like" if e["item_id"] in taste else "dislike")
                   for e in items}
        service.post_ratings(session.id, ratings)
    reports.append(service.close_session(session.id))

first = reports[0]
print(f"session {first['session_id']}: hit rates {first['hit_rates']}")
round_one = first["rounds"][0]
print(f"  round 1 teams (revealed only after close): {round_one['teams']}")

pooled = interactive.aggregate_reports(reports, resamples=100_000, seed=0)
print(f"\npooled over {pooled['rounds']} rounds:")
for name, rate in pooled["hit_rates"].items():
    print(f"  {name}: per-turn hit rate {rate:.3f}")
print(f"paired sign-flip permutation test: p = {pooled['p_value']:.5f}")
print("(the sharp system should win decisively)")
