import numpy as np
import pytest

from app.core.adversarial import (
    attack,
    defense_eval,
    distance_to_manifold,
    label_rule,
    make_labels,
    project_manifold,
    train_classifier,
)
from app.core.config import AttackConfig
from app.core.datasets import ground_truth
from app.core.errors import LabError


@pytest.fixture(scope="module")
def separable():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 100)
    x = rng.standard_normal((200, 2)) * 0.2
    x[:, 0] += np.where(y == 1, 1.0, -1.0)
    return x, y


@pytest.fixture(scope="module")
def classifier(separable):
    x, y = separable
    return train_classifier(x, y, hidden=(16,), epochs=200, seed=0)


class TestLabels:
    def test_rule_uses_the_first_coordinate(self):
        assert label_rule([[0.5, -1.0], [-0.5, 1.0], [0.0, 0.0]]).tolist() == [1, 0, 0]

    def test_labeled_ground_truth(self):
        with pytest.raises(LabError):
            make_labels(ground_truth("ss_discrete"), np.zeros((3, 1)))

    def test_labels_follow_the_manifold(self):
        gt = ground_truth("figure8")
        z = np.linspace(-2, 2, 11)[:, None]
        np.testing.assert_array_equal(make_labels(gt, z), label_rule(gt.mean(z)))


class TestAttack:
    def test_classifier_fits(self, classifier):
        assert classifier.train_accuracy > 0.95

    def test_zero_budget_leaves_points_alone(self, classifier, separable):
        x, y = separable
        np.testing.assert_array_equal(attack(classifier, x, y, AttackConfig(epsilon=0.0)).numpy(), x)

    def test_perturbation_stays_in_the_box(self, classifier, separable):
        x, y = separable
        moved = attack(classifier, x, y, AttackConfig(epsilon=0.1, steps=10)).numpy()
        assert np.abs(moved - x).max() <= 0.1 + 1e-12

    def test_identity_projector(self, classifier, separable):
        x, y = separable
        result = defense_eval(classifier, lambda v: v, x, y, AttackConfig(epsilon=0.3))
        assert result.attack_succ_projected == result.attack_succ_raw
        assert result.clean_acc == result.clean_acc_projected
        assert result.n == 200

    def test_large_budget_breaks_the_classifier(self, classifier, separable):
        x, y = separable
        result = defense_eval(classifier, lambda v: v, x, y, AttackConfig(epsilon=3.0, steps=30))
        assert result.attack_succ_raw > 0.9


class TestProjection:
    def test_distance_vanishes_on_the_curve(self):
        gt = ground_truth("figure8")
        on_curve = gt.mean(np.linspace(-2, 2, 50)[:, None])
        assert distance_to_manifold(gt, on_curve).max() < 5e-3

    def test_projection_shape(self, small_model, rng):
        x = rng.standard_normal((7, 2))
        assert tuple(project_manifold(small_model, x).shape) == (7, 2)
