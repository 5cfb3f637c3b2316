import pytest
import torch

from diffadv.attacks import AttackConfig, pgd
from diffadv.denoiser import new_denoiser
from diffadv.evaluation import (
    RateEntry,
    anti_purification_report,
    perturbation_stats,
    purify_then_classify,
    select_correct,
    success_curve,
    success_rate,
    transfer_matrix,
)
from diffadv.models import ClassifierSpec, new_classifier
from diffadv.sampler import SdeditConfig
from diffadv.schedule import make_schedule, respace
from diffadv.unet import ArchSpec


@pytest.fixture(scope="module")
def rs():
    return respace(make_schedule(100, 1e-3, 0.02), 10)


@pytest.fixture(scope="module")
def clf():
    model = new_classifier(ClassifierSpec(resolution=8, num_classes=3, base_width=8), seed=0)
    model.eval()
    return model


@pytest.fixture(scope="module")
def clf2():
    model = new_classifier(ClassifierSpec(resolution=8, num_classes=3, base_width=8), seed=1)
    model.eval()
    return model


@pytest.fixture(scope="module")
def denoiser():
    model = new_denoiser(
        ArchSpec(resolution=8, channels=3, base_width=8, channel_mults=(1,), emb_dim=16), seed=0
    )
    model.eval()
    return model


def _correct_pool(clf, n=12):
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(64, 3, 8, 8, generator=gen)
    with torch.no_grad():
        y = clf(x).argmax(dim=-1)
    return x[:n], y[:n]


def test_success_rate_zero_on_clean_inputs(clf):
    x, y = _correct_pool(clf)
    entry = success_rate(clf, x, y)
    assert entry.rate == 0.0
    assert entry.count == x.shape[0]


def test_success_rate_single_misclassified(clf):
    x, y = _correct_pool(clf, n=1)
    wrong = (y + 1) % 3
    entry = success_rate(clf, x, wrong)
    assert entry.rate == 1.0 and entry.count == 1


def test_success_rate_empty_rejected(clf):
    with pytest.raises(ValueError, match="empty"):
        success_rate(clf, torch.zeros(0, 3, 8, 8), torch.zeros(0, dtype=torch.long))


def test_success_rate_accepts_attack_outputs(clf):
    x, y = _correct_pool(clf, n=6)
    out = pgd(clf, x, y, AttackConfig(n=3, seed=0))
    entry = success_rate(clf, [out], y)
    assert entry.rate == pytest.approx(float(out.success_xn.float().mean()))


def test_significance_flag():
    assert not RateEntry(rate=0.5, count=49).significant
    assert RateEntry(rate=0.5, count=50).significant


def test_select_correct_only_keeps_correct(clf):
    gen = torch.Generator().manual_seed(1)
    x = torch.rand(32, 3, 8, 8, generator=gen)
    y = torch.randint(0, 3, (32,), generator=gen)
    idx = select_correct(clf, x, y)
    with torch.no_grad():
        preds = clf(x[idx]).argmax(dim=-1)
    assert torch.equal(preds, y[idx])


def test_purify_k0_equals_plain_classification(clf, denoiser, rs):
    x, y = _correct_pool(clf, n=8)
    preds = purify_then_classify(clf, denoiser, x, SdeditConfig(K=0, seed=3), rs)
    with torch.no_grad():
        plain = clf(x).argmax(dim=-1)
    assert torch.equal(preds, plain)


def test_purify_deterministic_given_seed(clf, denoiser, rs):
    x, _ = _correct_pool(clf, n=4)
    cfg = SdeditConfig(K=3, seed=7)
    a = purify_then_classify(clf, denoiser, x, cfg, rs)
    b = purify_then_classify(clf, denoiser, x, cfg, rs)
    assert torch.equal(a, b)


def test_transfer_matrix_diagonal_matches_success_rate(clf, clf2):
    x, y = _correct_pool(clf, n=8)
    out_a = pgd(clf, x, y, AttackConfig(n=3, seed=0))
    out_b = pgd(clf2, x, y, AttackConfig(n=3, seed=0))
    matrix = transfer_matrix([clf, clf2], [[out_a], [out_b]], y)
    assert matrix[0][0].rate == pytest.approx(success_rate(clf, [out_a], y).rate)
    assert matrix[1][1].rate == pytest.approx(success_rate(clf2, [out_b], y).rate)


def test_transfer_matrix_requires_two_classifiers(clf):
    x, y = _correct_pool(clf, n=4)
    out = pgd(clf, x, y, AttackConfig(n=2, seed=0))
    with pytest.raises(ValueError, match="two"):
        transfer_matrix([clf], [[out]], y)


def test_transfer_matrix_label_space_mismatch(clf):
    other = new_classifier(ClassifierSpec(resolution=8, num_classes=4, base_width=8), seed=2)
    x, y = _correct_pool(clf, n=4)
    out = pgd(clf, x, y, AttackConfig(n=2, seed=0))
    with pytest.raises(ValueError, match="label space"):
        transfer_matrix([clf, other], [[out], [out]], y)


def test_anti_purification_zero_inputs_rate_zero(clf, denoiser, rs):
    report = anti_purification_report(
        clf, denoiser,
        {"pgd": torch.zeros(0, 3, 8, 8), "diff": torch.zeros(0, 3, 8, 8)},
        torch.zeros(0, dtype=torch.long),
        SdeditConfig(K=2, seed=1), rs,
    )
    assert all(e.rate == 0.0 for e in report.values())


def test_anti_purification_mismatched_sets_rejected(clf, denoiser, rs):
    with pytest.raises(ValueError, match="evaluation set"):
        anti_purification_report(
            clf, denoiser,
            {"a": torch.zeros(2, 3, 8, 8), "b": torch.zeros(3, 3, 8, 8)},
            torch.zeros(2, dtype=torch.long),
            SdeditConfig(K=2, seed=1), rs,
        )


def test_success_curve_shape(clf):
    x, y = _correct_pool(clf, n=5)
    out = pgd(clf, x, y, AttackConfig(n=4, seed=0))
    curve = success_curve([out], y)
    assert [it for it, _ in curve] == [1, 2, 3, 4]
    assert all(0.0 <= r <= 1.0 for _, r in curve)


def test_perturbation_stats():
    x = torch.zeros(2, 3, 4, 4)
    adv = x.clone()
    adv[0, 0, 0, 0] = 0.5
    stats = perturbation_stats(adv, x)
    assert stats["linf_mean"] == pytest.approx(0.25)
    assert stats["l2_mean"] == pytest.approx(0.25)
