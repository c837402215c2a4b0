import pytest

from courtsim.agents import Leaning
from courtsim.consensus import check_consensus, meets_threshold

from . import oracles

G, NG, U = Leaning.GUILTY, Leaning.NOT_GUILTY, Leaning.UNDECIDED


@pytest.mark.parametrize(
    "votes,rule,expected",
    [
        ([G] * 5, "greater_or_equal", (1.0, G, True)),
        ([G, G, G, G, NG], "greater_or_equal", (0.8, G, True)),
        ([G, G, G, G, NG], "greater", (0.8, G, False)),
        ([G, G, NG, NG, U], "greater_or_equal", (0.4, None, False)),
        ([U] * 5, "greater_or_equal", (1.0, U, False)),
    ],
)
def test_examples(votes, rule, expected):
    r = check_consensus(votes, 0.8, rule)
    assert (r.agreement_ratio, r.modal_leaning, r.consensus) == expected


def test_errors():
    with pytest.raises(ValueError):
        check_consensus([], 0.8)
    with pytest.raises(ValueError):
        meets_threshold(0.9, 0.8, "roughly")


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_matches_exhaustive_oracle(n):
    mismatches = 0
    for votes in oracles.all_vote_vectors(n):
        for threshold in (0.5, 0.8, 1.0):
            for rule in ("greater", "greater_or_equal"):
                r = check_consensus(list(votes), threshold, rule)
                got = (r.agreement_ratio, r.modal_leaning.value if r.modal_leaning else None, r.consensus)
                mismatches += got != oracles.consensus_oracle(votes, threshold, rule)
    assert mismatches == 0
