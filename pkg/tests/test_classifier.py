import math
import random
from collections import Counter

import numpy as np
import pytest

from pubbie import classifier, labels
from pubbie.errors import (
    DimensionMismatchError,
    EmptyCorpusError,
    EmptyEvalError,
    LengthMismatchError,
    TooSmallError,
)
from pubbie.store import Publication

DIM = classifier.EMBEDDING_DIM


# --- independent NB oracle -------------------------------------------------------
# Brute-force: recompute priors and Laplace likelihoods from raw counts and
# score every label with plain arithmetic. Shares only the tokenizer (the
# tokenization rule is part of the model contract, not the math under test).

def nb_oracle(corpus, text, alpha=1.0):
    docs_by_label: dict[str, list[str]] = {}
    for doc_text, label in corpus:
        docs_by_label.setdefault(label, []).append(doc_text)
    vocabulary = set()
    for doc_text, _ in corpus:
        vocabulary.update(classifier.tokenize(doc_text))
    n_docs = len(corpus)
    v = len(vocabulary)

    scores = {}
    for label, docs in docs_by_label.items():
        token_counts = Counter()
        for doc in docs:
            token_counts.update(classifier.tokenize(doc))
        total_tokens = sum(token_counts.values())
        log_post = math.log(len(docs) / n_docs)
        for token, count in classifier.tokenize(text).items():
            if token in vocabulary:
                prob = (token_counts[token] + alpha) / (total_tokens + alpha * v)
                log_post += count * math.log(prob)
        scores[label] = log_post

    best, best_score = None, float("-inf")
    for label in labels.CANONICAL_LABELS:  # canonical tie-break
        if label in scores and scores[label] > best_score:
            best, best_score = label, scores[label]
    return best, scores


def random_corpus(rng: random.Random, max_docs=20, max_tokens=30):
    pool = [f"tok{i}" for i in range(max_tokens)]
    label_pool = rng.sample(list(labels.CANONICAL_LABELS), rng.randint(2, 5))
    n_docs = rng.randint(2, max_docs)
    corpus = []
    for _ in range(n_docs):
        words = rng.choices(pool, k=rng.randint(1, 8))
        corpus.append((" ".join(words), rng.choice(label_pool)))
    query = " ".join(rng.choices(pool + ["unseen_token"], k=rng.randint(1, 8)))
    return corpus, query


# --- feature rendering ---------------------------------------------------------

def test_render_features_all_empty():
    rendered = classifier.render_features(Publication(eid="e", title=""))
    lines = rendered.split("\n")
    assert len(lines) == 10
    assert lines[0] == "title: "
    assert all(line.endswith(": ") or ": " in line for line in lines)


def test_render_features_deterministic_and_order():
    pub = Publication(eid="e", title="T", authors="A", publisher="P")
    assert classifier.render_features(pub) == classifier.render_features(pub)
    assert classifier.render_features(pub).startswith("title: T\nauthors: A\n")


def test_render_features_normalizes_newlines():
    pub = Publication(eid="e", title="Line one\nline two\r\nthree")
    rendered = classifier.render_features(pub)
    assert rendered.split("\n")[0] == "title: Line one line two three"


# --- tokenizer ---------------------------------------------------------------

def test_tokenize_counts():
    assert classifier.tokenize("Methane slip, methane!") == {"methane": 2, "slip": 1}


def test_tokenize_empty():
    assert classifier.tokenize("") == {}


def test_tokenize_drops_short_tokens():
    assert classifier.tokenize("a I x") == {}


# --- naive bayes -----------------------------------------------------------------

def test_nb_separable_two_docs():
    corpus = [
        ("methane engine fuels", "Materials for Clean Fuels"),
        ("vaccine screening trial", "Pandemic Response"),
    ]
    model = classifier.train_naive_bayes(corpus)
    for text, label in corpus:
        predicted, _ = classifier.predict_nb(model, text)
        assert predicted == label


def test_nb_matches_hand_computed_four_doc_posterior():
    corpus = [
        ("methane engine", "Materials for Clean Fuels"),
        ("methane slip", "Materials for Clean Fuels"),
        ("vaccine trial", "Pandemic Response"),
        ("vaccine engine", "Pandemic Response"),
    ]
    # Vocabulary {engine, methane, slip, trial, vaccine}, V=5; each class has
    # 4 tokens total, so Laplace denominators are 4 + 5 = 9.
    expected_mcf = math.log(2 / 4) + math.log(3 / 9) + 2 * math.log(2 / 9)
    expected_pr = math.log(2 / 4) + math.log(1 / 9) + 2 * math.log(2 / 9)

    model = classifier.train_naive_bayes(corpus, alpha=1.0)
    predicted, scores = classifier.predict_nb(model, "methane engine engine")
    assert predicted == "Materials for Clean Fuels"
    assert scores[labels.label_index("Materials for Clean Fuels")] == pytest.approx(
        expected_mcf, abs=1e-9
    )
    assert scores[labels.label_index("Pandemic Response")] == pytest.approx(
        expected_pr, abs=1e-9
    )


def test_nb_rejects_bad_inputs():
    with pytest.raises(EmptyCorpusError):
        classifier.train_naive_bayes([])
    with pytest.raises(ValueError):
        classifier.train_naive_bayes([("x y", labels.NO_PROGRAM)], alpha=0.0)


def test_nb_all_oov_falls_back_to_prior():
    corpus = [
        ("alpha beta", "Aging in Place"),
        ("alpha gamma", "Aging in Place"),
        ("delta epsilon", "Pandemic Response"),
    ]
    model = classifier.train_naive_bayes(corpus)
    predicted, scores = classifier.predict_nb(model, "zz qq ww")
    assert predicted == "Aging in Place"  # majority prior
    expected = math.log(2 / 3)
    assert scores[labels.label_index("Aging in Place")] == pytest.approx(expected, abs=1e-9)


def test_nb_model_invariants():
    corpus = [
        ("methane engine fuels engine", "Materials for Clean Fuels"),
        ("vaccine trial", "Pandemic Response"),
        ("ice roads", "Arctic and Northern"),
    ]
    model = classifier.train_naive_bayes(corpus, alpha=0.7)
    prior_sum = sum(math.exp(p) for p in model.class_log_prior.values())
    assert prior_sum == pytest.approx(1.0, abs=1e-9)
    for label in model.model_labels:
        total = sum(math.exp(p) for p in model.token_log_likelihood[label])
        assert total == pytest.approx(1.0, abs=1e-9)


def test_nb_equals_bruteforce_oracle_on_random_corpora():
    rng = random.Random(7)
    for _ in range(30):
        corpus, query = random_corpus(rng)
        model = classifier.train_naive_bayes(corpus)
        predicted, scores = classifier.predict_nb(model, query)
        oracle_label, oracle_scores = nb_oracle(corpus, query)
        assert predicted == oracle_label
        for label, expected in oracle_scores.items():
            assert scores[labels.label_index(label)] == pytest.approx(expected, abs=1e-9)


def test_nb_persistence_roundtrip(tmp_path):
    corpus = [
        ("methane engine", "Materials for Clean Fuels"),
        ("vaccine trial", "Pandemic Response"),
    ]
    model = classifier.train_naive_bayes(corpus)
    path = str(tmp_path / "nb.json")
    classifier.save_nb_model(model, path)
    reloaded = classifier.load_nb_model(path)
    for text in ("methane", "vaccine trial", "unrelated"):
        assert classifier.predict_nb(model, text) == classifier.predict_nb(reloaded, text)


# --- linear head --------------------------------------------------------------

def one_hot_embedding(class_idx: int, scale: float = 5.0) -> list[float]:
    vec = [0.0] * DIM
    vec[class_idx] = scale
    return vec


def test_head_zero_epochs_equals_init():
    config = classifier.TrainConfig(epochs=0, seed=42)
    head = classifier.train_linear_head([one_hot_embedding(0)], [labels.CANONICAL_LABELS[0]], config)
    init = classifier.init_head(config)
    assert np.array_equal(head.weights, init.weights)
    assert np.array_equal(head.bias, init.bias)


def test_head_learns_separable_clusters():
    embeddings, gold = [], []
    for idx, label in enumerate(labels.CANONICAL_LABELS):
        for _ in range(2):
            embeddings.append(one_hot_embedding(idx))
            gold.append(label)
    config = classifier.TrainConfig(learning_rate=0.5, epochs=500, seed=1)
    head = classifier.train_linear_head(embeddings, gold, config)
    predictions = [classifier.predict_linear(head, e)[0] for e in embeddings]
    assert predictions == gold
    assert head.final_loss < 0.5


def test_head_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    inputs = rng.normal(size=(6, DIM))
    targets = rng.integers(0, labels.NUM_LABELS, size=6)
    weights = rng.normal(scale=0.1, size=(labels.NUM_LABELS, DIM))
    bias = rng.normal(scale=0.1, size=labels.NUM_LABELS)

    _, grad_w, grad_b = classifier.cross_entropy_and_grad(weights, bias, inputs, targets)

    def loss_at(w, b):
        return classifier.cross_entropy_and_grad(w, b, inputs, targets)[0]

    h = 1e-5
    for _ in range(10):
        i = rng.integers(0, labels.NUM_LABELS)
        j = rng.integers(0, DIM)
        w_plus, w_minus = weights.copy(), weights.copy()
        w_plus[i, j] += h
        w_minus[i, j] -= h
        numeric = (loss_at(w_plus, bias) - loss_at(w_minus, bias)) / (2 * h)
        denom = max(abs(numeric), abs(grad_w[i, j]), 1e-8)
        assert abs(numeric - grad_w[i, j]) / denom < 1e-4
    for i in (0, labels.NUM_LABELS - 1):
        b_plus, b_minus = bias.copy(), bias.copy()
        b_plus[i] += h
        b_minus[i] -= h
        numeric = (loss_at(weights, b_plus) - loss_at(weights, b_minus)) / (2 * h)
        denom = max(abs(numeric), abs(grad_b[i]), 1e-8)
        assert abs(numeric - grad_b[i]) / denom < 1e-4


def test_head_training_is_deterministic():
    rng = np.random.default_rng(11)
    embeddings = rng.normal(size=(10, DIM)).tolist()
    gold = [labels.CANONICAL_LABELS[i % 13] for i in range(10)]
    config = classifier.TrainConfig(epochs=50, seed=5)
    head_a = classifier.train_linear_head(embeddings, gold, config)
    head_b = classifier.train_linear_head(embeddings, gold, config)
    assert np.array_equal(head_a.weights, head_b.weights)  # bitwise
    assert np.array_equal(head_a.bias, head_b.bias)


def test_head_input_validation():
    with pytest.raises(EmptyCorpusError):
        classifier.train_linear_head([], [])
    with pytest.raises(LengthMismatchError):
        classifier.train_linear_head([one_hot_embedding(0)], [])
    with pytest.raises(DimensionMismatchError):
        classifier.train_linear_head([[1.0, 2.0]], [labels.NO_PROGRAM])
    head = classifier.init_head(classifier.TrainConfig())
    with pytest.raises(DimensionMismatchError):
        classifier.predict_linear(head, [1.0] * 100)


def test_predict_linear_uniform_for_zero_head():
    head = classifier.LinearHead(
        weights=np.zeros((labels.NUM_LABELS, DIM)), bias=np.zeros(labels.NUM_LABELS)
    )
    label, probs = classifier.predict_linear(head, list(range(DIM)))
    assert label == labels.CANONICAL_LABELS[0]  # canonical tie-break
    assert probs == pytest.approx([1 / 13] * 13, abs=1e-12)


def test_predict_linear_probabilities_sum_to_one():
    rng = np.random.default_rng(9)
    head = classifier.LinearHead(
        weights=rng.normal(size=(labels.NUM_LABELS, DIM)),
        bias=rng.normal(size=labels.NUM_LABELS),
    )
    for _ in range(5):
        _, probs = classifier.predict_linear(head, rng.normal(size=DIM))
        assert sum(probs) == pytest.approx(1.0, abs=1e-9)
        assert all(p >= 0 for p in probs)


def test_argmax_invariant_under_logit_shift():
    rng = np.random.default_rng(13)
    head = classifier.LinearHead(
        weights=rng.normal(size=(labels.NUM_LABELS, DIM)),
        bias=rng.normal(size=labels.NUM_LABELS),
    )
    shifted = classifier.LinearHead(weights=head.weights, bias=head.bias + 100.0)
    for _ in range(5):
        x = rng.normal(size=DIM)
        assert classifier.predict_linear(head, x)[0] == classifier.predict_linear(shifted, x)[0]


def test_head_persistence_roundtrip(tmp_path):
    config = classifier.TrainConfig(epochs=20, seed=2)
    rng = np.random.default_rng(2)
    embeddings = rng.normal(size=(5, DIM)).tolist()
    gold = [labels.CANONICAL_LABELS[i] for i in range(5)]
    head = classifier.train_linear_head(embeddings, gold, config)
    path = str(tmp_path / "head.json")
    classifier.save_linear_head(head, path)
    reloaded = classifier.load_linear_head(path)
    assert np.array_equal(head.weights, reloaded.weights)
    assert reloaded.config.seed == 2


# --- metrics -----------------------------------------------------------------

def test_evaluate_perfect_predictions():
    gold = ["Aging in Place", "Pandemic Response", "Arctic and Northern"]
    metrics = classifier.evaluate(gold, gold)
    assert metrics.accuracy == 1.0
    assert metrics.macro_precision == 1.0
    assert metrics.macro_recall == 1.0
    assert metrics.macro_f1 == 1.0


def test_evaluate_hand_computed_three_class():
    a, b, c = "Aging in Place", "Pandemic Response", "Arctic and Northern"
    gold = [a, a, b, c]
    pred = [a, b, b, c]
    metrics = classifier.evaluate(pred, gold)
    assert metrics.accuracy == pytest.approx(0.75, abs=1e-9)
    # A: TP=1 FP=0 FN=1 -> P=1, R=0.5, F1=2/3; B: TP=1 FP=1 -> P=0.5, R=1,
    # F1=2/3; C: perfect.
    pa, ra, fa, sa = metrics.per_label[a]
    assert (pa, ra, sa) == (1.0, 0.5, 2)
    assert fa == pytest.approx(2 / 3, abs=1e-9)
    pb, rb, fb, sb = metrics.per_label[b]
    assert (pb, rb, sb) == (0.5, 1.0, 1)
    assert fb == pytest.approx(2 / 3, abs=1e-9)
    assert metrics.per_label[c][:3] == (1.0, 1.0, 1.0)
    assert metrics.macro_precision == pytest.approx((1.0 + 0.5 + 1.0) / 3, abs=1e-9)
    assert metrics.macro_recall == pytest.approx((0.5 + 1.0 + 1.0) / 3, abs=1e-9)
    assert metrics.macro_f1 == pytest.approx((2 / 3 + 2 / 3 + 1.0) / 3, abs=1e-9)


def test_evaluate_single_class_predictions():
    a, b = "Aging in Place", "Pandemic Response"
    metrics = classifier.evaluate([a, a, a, a], [a, a, b, b])
    assert metrics.per_label[a][1] == 1.0  # recall of predicted class
    assert metrics.per_label[b][1] == 0.0


def test_evaluate_permutation_invariant():
    rng = random.Random(5)
    gold = [rng.choice(labels.CANONICAL_LABELS) for _ in range(40)]
    pred = [rng.choice(labels.CANONICAL_LABELS) for _ in range(40)]
    base = classifier.evaluate(pred, gold)
    order = list(range(40))
    rng.shuffle(order)
    shuffled = classifier.evaluate([pred[i] for i in order], [gold[i] for i in order])
    assert shuffled == base


def test_evaluate_rejects_bad_inputs():
    with pytest.raises(LengthMismatchError):
        classifier.evaluate(["Aging in Place"], [])
    with pytest.raises(EmptyEvalError):
        classifier.evaluate([], [])


def test_evaluate_metrics_excluded_for_absent_labels():
    a, b = "Aging in Place", "Pandemic Response"
    metrics = classifier.evaluate([a, b], [a, a])
    # b never appears in gold: contributes FP to a's... precision? No: to b's
    # own column. Macro averages only over labels present in gold (just a).
    assert metrics.macro_recall == 0.5
    assert metrics.macro_precision == 1.0


# --- splits -------------------------------------------------------------------

def test_split_656_matches_expected_sizes():
    split = classifier.make_split(656, seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (524, 66, 66)


def test_split_100_rounds_to_80_10_10():
    split = classifier.make_split(100, seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (80, 10, 10)


def test_split_deterministic_and_partitioning():
    a = classifier.make_split(57, seed=9)
    b = classifier.make_split(57, seed=9)
    assert (a.train, a.val, a.test) == (b.train, b.val, b.test)
    combined = sorted(a.train + a.val + a.test)
    assert combined == list(range(57))
    assert classifier.make_split(57, seed=10).train != a.train


def test_split_too_small():
    with pytest.raises(TooSmallError):
        classifier.make_split(12)
