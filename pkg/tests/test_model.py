"""Toy model: distributions, nucleus decoding, training, checkpoints."""

import math

import numpy as np
import pytest

from itertl.losses import RankingConfig, ResponseLogProbs
from itertl.model import (
    AdamState,
    DecodingParams,
    StopRule,
    ToyModel,
    TrainingGroup,
    Vocab,
    _nucleus,
    load_checkpoint,
    model_digest,
    next_distribution,
    sample,
    save_checkpoint,
    score_sequence,
    train_step,
    train_to_convergence,
)

V4 = Vocab(("<s>", "</s>", "a", "b"))
CFG = RankingConfig()


def model4(order=1):
    return ToyModel(V4, order=order, seed=0)


def test_vocab_validation():
    with pytest.raises(ValueError):
        Vocab(("<s>", "</s>"))
    with pytest.raises(ValueError):
        Vocab(("<s>", "</s>", "a", "a"))
    with pytest.raises(ValueError):
        Vocab(("x", "y", "z"))  # markers missing


def test_vocab_encode_decode():
    v = Vocab.from_texts(["assign y = a"], bos="<s>", eos="</s>")
    ids = v.encode("assign y = a")
    assert v.decode(ids) == "assign y = a"
    assert v.decode([v.bos_id, *ids, v.eos_id]) == "assign y = a"
    with pytest.raises(ValueError):
        v.encode("unknown_word")


def test_uniform_distribution_on_zero_row():
    dist = next_distribution(model4(), [2])
    assert dist == pytest.approx([0.25] * 4, abs=1e-12)
    assert abs(dist.sum() - 1.0) < 1e-12


def test_known_logits_softmax():
    m = model4()
    row = m.trainable_row((2,))
    row[:] = [1.0, 1.0, 0.0, 0.0]
    e = math.e
    expected = [e / (2 * e + 2), e / (2 * e + 2), 1 / (2 * e + 2), 1 / (2 * e + 2)]
    assert next_distribution(m, [2]) == pytest.approx(expected, abs=1e-12)


def test_extreme_logit_is_stable():
    m = model4()
    m.trainable_row((2,))[0] = 1000.0
    dist = next_distribution(m, [2])
    assert np.all(np.isfinite(dist))
    assert dist[0] == pytest.approx(1.0, abs=1e-9)


def test_softmax_shift_invariance():
    m = model4()
    m.trainable_row((2,))[:] = [0.3, -1.2, 2.0, 0.0]
    base = next_distribution(m, [2])
    m.trainable_row((2,))[:] += 7.5
    assert next_distribution(m, [2]) == pytest.approx(base, abs=1e-12)


def test_context_left_padding():
    m = model4(order=3)
    assert m.context_of([]) == (m.vocab.bos_id,) * 3
    assert m.context_of([2]) == (m.vocab.bos_id, m.vocab.bos_id, 2)
    assert m.context_of([2, 3, 2, 3]) == (3, 2, 3)


def test_nucleus_truncation_derived_case():
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    keep, renorm = _nucleus(probs, 0.95)
    assert list(keep) == [0, 1, 2]
    assert renorm == pytest.approx([10 / 19, 6 / 19, 3 / 19], abs=1e-12)


def test_nucleus_full_mass_keeps_everything():
    probs = np.array([0.5, 0.3, 0.15, 0.05])
    keep, renorm = _nucleus(probs, 1.0)
    assert list(keep) == [0, 1, 2, 3]
    assert renorm == pytest.approx(probs, abs=1e-12)


def test_greedy_is_argmax_with_low_id_ties():
    m = model4(order=1)
    m.trainable_row((m.vocab.bos_id,))[:] = [0.0, 1.0, 1.0, 0.0]  # tie ids 1,2
    ids, lps = sample(m, [], DecodingParams(0.0, 0.95, 1), np.random.default_rng(0))
    assert ids == [1]  # lowest id among the tied maxima; also happens to be EOS
    assert lps[0] == pytest.approx(math.log(next_distribution(m, [])[1]))


def test_sample_stops_at_eos_and_keeps_it():
    m = model4(order=1)
    for ctx in range(4):
        m.trainable_row((ctx,))[m.vocab.eos_id] = 50.0
    ids, _ = sample(m, [2], DecodingParams(0.0, 0.95, 10), np.random.default_rng(0))
    assert ids == [m.vocab.eos_id]


def test_sample_respects_max_tokens():
    m = model4(order=1)
    for ctx in range(4):
        m.trainable_row((ctx,))[2] = 50.0  # never EOS
    ids, _ = sample(m, [], DecodingParams(0.0, 0.95, 7), np.random.default_rng(0))
    assert len(ids) == 7


def test_sample_seed_reproducible():
    m = model4(order=1)
    m.trainable_row((2,))[:] = [0.1, 0.4, 1.0, 0.2]
    params = DecodingParams(0.8, 0.9, 16)
    a = sample(m, [2], params, np.random.default_rng(123))
    b = sample(m, [2], params, np.random.default_rng(123))
    assert a == b


def test_sampled_logprobs_are_truncated_distribution():
    m = model4(order=1)
    row = m.trainable_row((m.vocab.bos_id,))
    row[:] = [math.log(0.5), math.log(0.3), math.log(0.15), math.log(0.05)]
    params = DecodingParams(1.0, 0.95, 1)
    seen = {}
    for s in range(200):
        ids, lps = sample(m, [], params, np.random.default_rng(s))
        seen[ids[0]] = lps[0]
    assert 3 not in seen  # excluded from the nucleus
    for tok, lp in seen.items():
        expected = {0: 10 / 19, 1: 6 / 19, 2: 3 / 19}[tok]
        assert lp == pytest.approx(math.log(expected), abs=1e-9)


def test_nucleus_empirical_frequencies():
    m = model4(order=1)
    row = m.trainable_row((m.vocab.bos_id,))
    row[:] = [math.log(0.5), math.log(0.3), math.log(0.15), math.log(0.05)]
    params = DecodingParams(1.0, 0.95, 1)
    n = 100_000
    rng = np.random.default_rng(2024)
    counts = np.zeros(4, dtype=int)
    for _ in range(n):
        ids, _ = sample(m, [], params, rng)
        counts[ids[0]] += 1
    assert counts[3] == 0
    expected = np.array([10 / 19, 6 / 19, 3 / 19, 0.0])
    for tok in range(3):
        sigma = math.sqrt(expected[tok] * (1 - expected[tok]) / n)
        assert abs(counts[tok] / n - expected[tok]) <= 4 * sigma


def test_temperature_monotonicity():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = model4(order=1)
        m.trainable_row((2,))[:] = rng.normal(size=4)
        probs_by_t = []
        for t in (1.0, 0.8, 0.5, 0.2):
            row = m.logits_for((2,)) / t
            p = np.exp(row - row.max())
            p /= p.sum()
            probs_by_t.append(p.max())
        assert all(b >= a - 1e-12 for a, b in zip(probs_by_t, probs_by_t[1:]))


def test_score_sequence_uniform():
    lps = score_sequence(model4(order=1), [], [2])
    assert lps.token_logprobs == (pytest.approx(math.log(0.25)),)


def test_score_sequence_two_tokens_hand_computed():
    m = model4(order=1)
    m.trainable_row((m.vocab.bos_id,))[:] = [0.0, 0.0, 1.0, 0.0]
    m.trainable_row((2,))[:] = [0.0, 2.0, 0.0, 0.0]
    lps = score_sequence(m, [], [2, 1])
    p1 = math.exp(1.0) / (3 + math.exp(1.0))
    p2 = math.exp(2.0) / (3 + math.exp(2.0))
    assert lps.token_logprobs[0] == pytest.approx(math.log(p1), abs=1e-12)
    assert lps.token_logprobs[1] == pytest.approx(math.log(p2), abs=1e-12)


def test_greedy_sequence_scores_max_logprob():
    m = model4(order=1)
    rng = np.random.default_rng(9)
    for ctx in range(4):
        m.trainable_row((ctx,))[:] = rng.normal(size=4)
    ids, _ = sample(m, [2], DecodingParams(0.0, 0.95, 5), rng)
    lps = score_sequence(m, [2], ids)
    running = [2]
    for tok, lp in zip(ids, lps.token_logprobs):
        dist = next_distribution(m, running)
        assert lp == pytest.approx(math.log(dist.max()), abs=1e-12)
        running.append(tok)


def test_score_sequence_rejects_bad_tokens():
    with pytest.raises(ValueError):
        score_sequence(model4(), [], [99])
    with pytest.raises(ValueError):
        score_sequence(model4(), [], [])


def group_of(prompt, seqs, scores, ref):
    return TrainingGroup(tuple(prompt), tuple(tuple(s) for s in seqs),
                         tuple(scores), ref)


def test_train_step_increases_reference_likelihood():
    m = model4(order=1)
    g = group_of([2], [(3, 1)], [1.0], 0)
    before = sum(score_sequence(m, [2], [3, 1]).token_logprobs)
    train_step(m, [g], RankingConfig(lam=0.0), step_size=1e-2)
    after = sum(score_sequence(m, [2], [3, 1]).token_logprobs)
    assert after > before


def test_equal_scores_match_lam_zero_update():
    g = group_of([2], [(3,), (2, 3), (3, 1)], [1.0, 1.0, 1.0], 2)
    m1, m2 = model4(order=1), model4(order=1)
    train_step(m1, [g], RankingConfig(lam=0.0), step_size=1e-2)
    train_step(m2, [g], RankingConfig(lam=1.0), step_size=1e-2)
    assert sorted(m1._logits) == sorted(m2._logits)
    for ctx in m1._logits:
        assert m1._logits[ctx] == pytest.approx(m2._logits[ctx], abs=0)


def test_active_pair_gap_grows():
    m = model4(order=1)
    g = group_of([2], [(3, 3), (1,)], [-1.0, 1.0], 1)
    def gap():
        p_k = np.mean(score_sequence(m, [2], [3, 3]).token_logprobs)
        p_tau = np.mean(score_sequence(m, [2], [1]).token_logprobs)
        return p_tau - p_k
    before = gap()
    train_step(m, [g], RankingConfig(alpha=5.0), step_size=1e-2)
    assert gap() > before


def test_train_step_deterministic():
    def run():
        m = model4(order=1)
        opt = AdamState()
        g = group_of([2], [(3, 1), (2, 1)], [0.0, 1.0], 1)
        for _ in range(5):
            train_step(m, [g], CFG, step_size=1e-2, opt=opt)
        return {ctx: row.copy() for ctx, row in m._logits.items()}
    a, b = run(), run()
    assert sorted(a) == sorted(b)
    for ctx in a:
        assert np.array_equal(a[ctx], b[ctx])


def test_backprop_matches_finite_differences():
    from itertl.model import batch_gradients
    rng = np.random.default_rng(31)
    v5 = Vocab(("<s>", "</s>", "a", "b", "c"))
    m = ToyModel(v5, order=1, seed=0)
    for ctx in range(5):
        m.trainable_row((ctx,))[:] = rng.normal(scale=0.5, size=5)
    g = group_of([2], [(3, 4, 1), (4, 1), (2, 3, 1)], [-1.0, 0.4, 1.0], 2)
    _, grads = batch_gradients(m, [g], CFG)

    def batch_total():
        scored = [score_sequence(m, g.prompt, r) for r in g.responses]
        from itertl.losses import total_loss
        return total_loss(scored, g.scores, g.reference_index, CFG).total

    h = 1e-6
    for ctx, grad_row in grads.items():
        row = m.trainable_row(ctx)
        for tok in range(5):
            orig = row[tok]
            row[tok] = orig + h
            up = batch_total()
            row[tok] = orig - h
            down = batch_total()
            row[tok] = orig
            numeric = (up - down) / (2 * h)
            analytic = grad_row[tok]
            if abs(numeric) < 1e-7 and abs(analytic) < 1e-7:
                continue
            assert abs(numeric - analytic) / max(abs(numeric), abs(analytic)) < 1e-4


def test_non_finite_gradient_aborts():
    m = model4(order=1)
    m.trainable_row((2,))[:] = [np.inf, 0, 0, 0]
    g = group_of([2], [(3,)], [1.0], 0)
    with pytest.raises(RuntimeError):
        train_step(m, [g], CFG)


def test_train_to_convergence_memorizes_single_record():
    # order 2 gives the sequence distinct contexts, so a table model is
    # guaranteed to memorize it.
    m = model4(order=2)
    g = group_of([2], [(3, 3, 1)], [1.0], 0)
    trace = train_to_convergence(m, [g], RankingConfig(lam=0.0),
                                 stop=StopRule(max_epochs=400), step_size=0.1)
    assert trace.converged_loss < 1e-2


def test_train_to_convergence_empty_dataset():
    with pytest.raises(ValueError):
        train_to_convergence(model4(), [], CFG)


def test_stop_rule_cap_one_epoch():
    m = model4(order=1)
    g = group_of([2], [(3, 1)], [1.0], 0)
    trace = train_to_convergence(m, [g], CFG, stop=StopRule(max_epochs=1))
    assert trace.epochs == 1
    assert {r.epoch for r in trace.rows} == {1}


def test_checkpoint_round_trip(tmp_path):
    m = model4(order=2)
    g = group_of([2], [(3, 1), (2, 1)], [0.0, 1.0], 1)
    train_step(m, [g], CFG)
    m.iteration = 3
    header = save_checkpoint(m, tmp_path, "ck")
    loaded = load_checkpoint(header)
    assert loaded.vocab == m.vocab
    assert loaded.order == m.order
    assert loaded.iteration == 3
    assert model_digest(loaded) == model_digest(m)
    assert sorted(loaded._logits) == sorted(m._logits)
    for ctx in m._logits:
        assert np.array_equal(loaded._logits[ctx], m._logits[ctx])


def test_checkpoint_logits_file_is_little_endian_f8(tmp_path):
    import json
    m = model4(order=1)
    m.trainable_row((2,))[:] = [1.0, -2.0, 0.5, 0.0]
    header_path = save_checkpoint(m, tmp_path, "ck")
    header = json.loads(header_path.read_text())
    raw = np.fromfile(tmp_path / header["logits_file"], dtype="<f8")
    assert raw.tolist() == [1.0, -2.0, 0.5, 0.0]
    assert header["rows"] == 1 and header["cols"] == 4


def test_digest_changes_with_parameters():
    m = model4(order=1)
    d0 = model_digest(m)
    m.trainable_row((2,))[0] = 1.0
    assert model_digest(m) != d0


def test_reading_does_not_materialize_rows():
    m = model4(order=1)
    d0 = model_digest(m)
    next_distribution(m, [2, 3])
    score_sequence(m, [2], [3])
    sample(m, [2], DecodingParams(0.5, 0.95, 4), np.random.default_rng(0))
    assert model_digest(m) == d0
    assert m.contexts == []
