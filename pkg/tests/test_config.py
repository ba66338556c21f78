import pytest
from hypothesis import given, settings, strategies as st

from fedcl.config import KEYS, ConfigError, RunConfig, parse_config, parse_text, serialize_config


def test_empty_config_has_published_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = parse_config(path)
    assert cfg.train_lr == 0.01
    assert cfg.train_local_steps == 20 and cfg.train_batch_size == 32
    assert cfg.clients_total == 20 and cfg.clients_active == 10 and cfg.active_ratio == 0.5
    assert cfg.train_rounds == 200
    assert cfg.sync_schedule == (0.3, 0.6, 0.9) and cfg.sync_temperature == 0.8
    assert cfg.generator_lr == 1e-4 and cfg.generator_batch_size == 128 and cfg.generator_distill_batch_size == 32
    assert cfg.fedprox_mu == 0.1
    assert cfg == RunConfig()


def test_file_then_flags_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\ntrain.lr = 0.5\nseed = 3   # trailing comment\n")
    assert parse_config(path).train_lr == 0.5
    cfg = parse_config(path, ["train.lr=0.25"])
    assert cfg.train_lr == 0.25 and cfg.seed == 3


def test_errors_name_key_and_line():
    with pytest.raises(ConfigError) as info:
        parse_text("seed = 1\nbogus.key = 2\n")
    assert info.value.key == "bogus.key" and info.value.line == 2
    with pytest.raises(ConfigError) as info:
        parse_text("\n\ntrain.rounds = many\n")
    assert info.value.key == "train.rounds" and info.value.line == 3
    with pytest.raises(ConfigError, match="line 1"):
        parse_text("just words\n")
    with pytest.raises(ConfigError) as info:
        parse_text("clients.active = 30\n")
    assert info.value.key == "clients.active"


def test_strict_order_rejects_non_monotone_schedule():
    with pytest.raises(ConfigError, match="monotone"):
        parse_text("sync.schedule = 0.3, 0.9, 0.6\nsync.strict_order = true\n")
    # without the flag the listed order is taken as given
    assert parse_text("sync.schedule = 0.3, 0.9, 0.6\n").schedule == (0.3, 0.9, 0.6)
    assert parse_text("sync.order = decreasing\n").schedule == (0.9, 0.6, 0.3)


@pytest.mark.parametrize("line", [
    "train.local_steps = 0", "train.batch_size = 0", "fedprox.mu = -1", "sync.temperature = 1.0",
    "sync.schedule = 0.3, 1.2", "algorithm = fedfoo", "dataset = cifar", "curriculum.lambda = 0",
    "generator.diversity_weight = 0.5", "data.dirichlet_alpha = 0", "curriculum.enabled = maybe",
])
def test_constraint_violations(line):
    with pytest.raises(ConfigError):
        parse_text(line + "\n")


def test_every_field_has_a_dotted_key():
    assert len(KEYS) == len(RunConfig.__dataclass_fields__)
    assert KEYS["curriculum.lambda"] == "curriculum_lambda"
    assert KEYS["sync.max_rounds_per_state"] == "sync_max_rounds_per_state"


def test_round_trip_of_defaults():
    text = serialize_config(RunConfig())
    assert parse_text(text) == RunConfig()
    assert serialize_config(parse_text(text)) == text


values = st.fixed_dictionaries({
    "seed": st.integers(0, 10**6),
    "train.lr": st.floats(1e-5, 1.0),
    "clients.total": st.integers(10, 40),
    "curriculum.enabled": st.booleans(),
    "sync.schedule": st.lists(st.floats(0.01, 0.99), min_size=1, max_size=4),
    "algorithm": st.sampled_from(["fedcl", "fedavg", "fedprox"]),
})


@settings(max_examples=100, deadline=None)
@given(values)
def test_serialize_parse_round_trip(settings_):
    lines = []
    for key, v in settings_.items():
        if isinstance(v, list):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{key} = {v}")
    cfg = parse_text("\n".join(lines))
    assert parse_text(serialize_config(cfg)) == cfg
    assert serialize_config(parse_text(serialize_config(cfg))) == serialize_config(cfg)
