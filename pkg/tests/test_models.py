import pytest
import torch
import torch.nn.functional as F

from diffadv.data import make_desk_dataset
from diffadv.models import (
    AdversarialRecipe,
    ClassifierSpec,
    ClassifierTrainConfig,
    FeatureExtractor,
    accuracy,
    extract_features,
    load_classifier,
    logits,
    new_classifier,
    save_classifier,
    train_classifier,
)

SMALL = ClassifierSpec(resolution=8, num_classes=2, base_width=8)


@pytest.fixture(scope="module")
def toy_data():
    # separable 2-class toy set at 8x8
    x, y = make_desk_dataset(40, resolution=8, seed=0, num_classes=2, max_mix=0.0)
    return x, y


@pytest.fixture(scope="module")
def toy_classifier(toy_data):
    x, y = toy_data
    return train_classifier(x, y, ClassifierTrainConfig(epochs=5, batch_size=32, seed=0), spec=SMALL)


def test_logits_deterministic(toy_classifier):
    x = torch.rand(4, 3, 8, 8, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.equal(logits(toy_classifier, x), logits(toy_classifier, x))


def test_softmax_normalization(toy_classifier):
    x = torch.rand(4, 3, 8, 8, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        p = F.softmax(logits(toy_classifier, x), dim=-1)
    assert torch.allclose(p.sum(dim=-1), torch.ones(4), atol=1e-6)


def test_logit_length_is_class_count(toy_classifier):
    x = torch.rand(3, 8, 8)
    with torch.no_grad():
        out = logits(toy_classifier, x)
    assert out.shape == (2,)


def test_batched_and_single_agree(toy_classifier):
    x = torch.rand(8, 3, 8, 8, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        batched = logits(toy_classifier, x)
        singles = torch.stack([logits(toy_classifier, x[i]) for i in range(8)])
    assert torch.allclose(batched, singles, atol=1e-5)


def test_toy_training_reaches_high_accuracy(toy_data, toy_classifier):
    x, y = toy_data
    assert accuracy(toy_classifier, x, y) > 0.95


def test_same_seed_identical_parameters(toy_data):
    torch.set_num_threads(1)
    x, y = toy_data
    cfg = ClassifierTrainConfig(epochs=1, batch_size=32, seed=4)
    a = train_classifier(x, y, cfg, spec=SMALL)
    b = train_classifier(x, y, cfg, spec=SMALL)
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(pa, pb)


def test_adversarial_zero_radius_equals_standard(toy_data):
    torch.set_num_threads(1)
    x, y = toy_data
    cfg = ClassifierTrainConfig(epochs=1, batch_size=32, seed=5)
    std = train_classifier(x, y, cfg, spec=SMALL)
    adv = train_classifier(x, y, cfg, spec=SMALL, adversarial=AdversarialRecipe(epsilon=0.0, eta=0.0, n=1))
    for pa, pb in zip(std.state_dict().values(), adv.state_dict().values()):
        assert torch.equal(pa, pb)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        train_classifier(torch.zeros(0, 3, 8, 8), torch.zeros(0, dtype=torch.long))


def test_resolution_mismatch_raises(toy_classifier):
    with pytest.raises(ValueError, match="resolution"):
        logits(toy_classifier, torch.rand(1, 3, 16, 16))


def test_extract_features_contract(toy_classifier):
    fx = FeatureExtractor(backbone=toy_classifier)
    x = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(3))
    handles = ("conv1", "conv3", "conv5")
    feats = extract_features(fx, x, handles)
    assert len(feats) == len(handles)
    feats2 = extract_features(fx, x, handles)
    for a, b in zip(feats, feats2):
        assert torch.equal(a, b)
    with pytest.raises(KeyError, match="unknown"):
        extract_features(fx, x, ("conv99",))


def test_feature_gradient_matches_fd(toy_data):
    # gradient of ||feature||^2 wrt x on a 4x4 probe, float64
    x, y = toy_data
    spec = ClassifierSpec(resolution=4, num_classes=2, base_width=8)
    model = new_classifier(spec, seed=1).double()
    model.eval()
    fx = FeatureExtractor(backbone=model)
    gen = torch.Generator().manual_seed(4)
    probe = torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64, requires_grad=True)

    feats = extract_features(fx, probe, ("conv4",))
    loss = sum((f**2).sum() for f in feats)
    (g,) = torch.autograd.grad(loss, probe)

    h = 1e-6
    for idx in torch.randperm(probe.numel(), generator=gen)[:8]:
        flat = probe.detach().flatten().clone()
        flat[idx] += h
        with torch.no_grad():
            fp = sum(
                (f**2).sum() for f in extract_features(fx, flat.view(1, 3, 4, 4), ("conv4",))
            )
        flat[idx] -= 2 * h
        with torch.no_grad():
            fm = sum(
                (f**2).sum() for f in extract_features(fx, flat.view(1, 3, 4, 4), ("conv4",))
            )
        fd = float((fp - fm) / (2 * h))
        ad = float(g.flatten()[idx])
        assert abs(fd - ad) / max(abs(fd), abs(ad), 1e-9) < 1e-3


def test_classifier_checkpoint_round_trip(tmp_path, toy_classifier):
    path = tmp_path / "clf.pt"
    save_classifier(path, toy_classifier, seed=0)
    loaded = load_classifier(path)
    x = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(5))
    with torch.no_grad():
        assert torch.equal(logits(toy_classifier, x), logits(loaded, x))
    assert loaded.spec == toy_classifier.spec
