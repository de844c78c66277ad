import pytest

from app.core.config import AttackConfig, ExperimentConfig, TrainConfig, load_experiment_config
from app.core.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "experiment.cfg"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoad:
    def test_comments_and_grids(self, tmp_path):
        path = write(tmp_path, "# figure-8 sweep\n\ndataset = figure8\nmethod = iwae\ns_grid = 3, 10\n"
                               "hidden = 20,20\nepochs = 7\n")
        config = load_experiment_config(path)
        assert config.method == "iwae"
        assert config.s_grid == [3, 10]
        assert config.hidden == (20, 20)
        assert config.epochs == 7

    def test_overrides_win(self, tmp_path):
        config = load_experiment_config(write(tmp_path, "epochs = 7\n"), epochs=2, output_dir=None)
        assert config.epochs == 2
        assert config.output_dir == "results"

    def test_unknown_key_names_key_and_line(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(write(tmp_path, "epochs = 3\nlearning_rat = 0.1\n"))
        assert info.value.key == "learning_rat"
        assert info.value.line == 2
        assert "unknown key" in str(info.value)

    def test_invalid_value(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(write(tmp_path, "batch_size = 0\n"))
        assert info.value.key == "batch_size"

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(write(tmp_path, "dataset = moons\n"))

    def test_empty_grid(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(write(tmp_path, "s_grid =\n"))
        assert info.value.key == "s_grid"

    def test_missing_equals(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(write(tmp_path, "epochs = 3\nsemi_supervised\n"))
        assert info.value.line == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_config(str(tmp_path / "absent.cfg"))


class TestExperimentConfig:
    def test_hash_is_stable_and_sensitive(self):
        assert ExperimentConfig().config_hash() == ExperimentConfig().config_hash()
        assert ExperimentConfig().config_hash() != ExperimentConfig(epochs=99).config_hash()

    def test_with_overrides_revalidates(self):
        config = ExperimentConfig().with_overrides(alpha=1.0)
        assert config.alpha == 1.0
        with pytest.raises(ValueError):
            ExperimentConfig().with_overrides(alpha=-1.0)

    def test_train_config_drops_experiment_fields(self):
        train = ExperimentConfig(method="lin", epochs=4).train_config()
        assert type(train) is TrainConfig
        assert train.method == "lin" and train.epochs == 4

    def test_split_sizes(self):
        assert ExperimentConfig(n_train=10, n_validation=4, n_test=3).split_sizes == (10, 4, 3)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs, objective",
        [({}, "elbo"), ({"method": "lin"}, "elbo"), ({"method": "iwae"}, "iwae"), ({"semi_supervised": True}, "ss")],
    )
    def test_objective(self, kwargs, objective):
        assert TrainConfig(**kwargs).objective == objective

    def test_importance_samples_only_for_iwae(self):
        assert TrainConfig(importance_samples=7).objective_config().importance_samples == 1
        assert TrainConfig(method="iwae", importance_samples=7).objective_config().importance_samples == 7

    def test_needs_a_restart(self):
        with pytest.raises(ValueError):
            TrainConfig(gt_restarts=0, random_restarts=0)


def test_attack_step_size():
    assert AttackConfig(epsilon=0.4, steps=10).effective_step_size == pytest.approx(0.1)
    assert AttackConfig(epsilon=0.4, step_size=0.05).effective_step_size == 0.05
