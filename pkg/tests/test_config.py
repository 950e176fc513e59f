import json
import textwrap

import pytest

from splatforge.config import ConfigError, load_project_config
from splatforge.losses import LossConfig
from splatforge.trainer import TrainConfig


def write(tmp_path, text, name="proj.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


FULL = """\
    prompt: a ceramic owl
    seed: 3
    output_dir: out/owl
    init_points: 80
    train:
      stage1_steps: 40
      stage2_steps: 0
      resolutions: [16, 16, 24]
      azimuth_range: [-90, 90]
      guidance_weight: 0.5
    loss:
      color_mix: 0.3
      depth_weight: 0.25
    providers:
      guidance: local
      deadline: 4.5
    inputs:
      references:
        - {azimuth: 0, path: ref0.png}
        - {azimuth: 90, elevation: 10, path: ref90.png}
      depths:
        - {azimuth: 0, path: dep0.png}
      masks: []
      heldout: {azimuth: 45, path: held.png}
"""


def test_full_config_parses(tmp_path):
    cfg = load_project_config(write(tmp_path, FULL))
    assert cfg.train.prompt == "a ceramic owl"
    assert cfg.train.seed == 3
    assert cfg.train.stage1_steps == 40
    assert cfg.train.resolutions == (16, 16, 24)
    assert cfg.train.azimuth_range == (-90.0, 90.0)
    assert cfg.train.loss.color_mix == 0.3
    assert cfg.train.loss.depth_weight == 0.25
    assert cfg.init_points == 80
    assert cfg.output_dir == "out/owl"
    assert cfg.providers.guidance == "local"
    assert cfg.providers.deadline == 4.5
    assert [(v.azimuth, v.elevation, v.path) for v in cfg.inputs.references] == [
        (0.0, 0.0, "ref0.png"),
        (90.0, 10.0, "ref90.png"),
    ]
    assert cfg.inputs.heldout.azimuth == 45.0
    assert cfg.inputs.heldout.path == "held.png"


def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_project_config(write(tmp_path, "prompt: tiny\n"))
    defaults = TrainConfig(prompt="tiny")
    assert cfg.train == defaults
    assert cfg.train.loss == LossConfig()
    assert cfg.providers.guidance == "local"
    assert cfg.inputs.references == []
    assert cfg.inputs.heldout is None


def test_resolved_materializes_every_default(tmp_path):
    cfg = load_project_config(write(tmp_path, "prompt: tiny\nseed: 9\n"))
    resolved = cfg.resolved()
    # every dataclass field must appear explicitly, not just the overrides
    train_keys = set(resolved["train"])
    expected = {
        "stage1_steps", "stage2_steps", "ramp_fractions", "resolutions",
        "fixed_fraction", "azimuth_range", "elevation_range", "radius",
        "fov_y_deg", "background", "lrs", "center_lr_decay",
        "densify_interval", "densify_stop_fraction", "grad_threshold",
        "prune_opacity", "guidance_weight", "fixed_views",
    }
    assert train_keys == expected
    assert set(resolved["loss"]) == {
        "depth_alpha", "depth_beta", "depth_gamma", "scales", "scale_weights",
        "huber_delta", "color_mix", "depth_weight", "mask_weight",
        "feature_weight", "color_weight", "alpha_threshold",
    }
    assert resolved["seed"] == 9
    assert resolved["train"]["resolutions"] == [128, 256, 512]
    # the run log gets serialized; the resolved form must survive that
    json.dumps(resolved)


def test_unknown_top_level_key_is_line_anchored(tmp_path):
    p = write(tmp_path, "prompt: x\nwhatever: 1\n")
    with pytest.raises(ConfigError, match=r"proj\.yaml:2: unknown key 'whatever'"):
        load_project_config(p)


def test_unknown_train_key_names_its_line(tmp_path):
    p = write(
        tmp_path,
        """\
        prompt: x
        train:
          stage1_steps: 5
          warmup: 3
        """,
    )
    with pytest.raises(ConfigError, match=r":4: unknown key 'warmup' in 'train'"):
        load_project_config(p)


def test_unknown_loss_and_provider_keys(tmp_path):
    p = write(tmp_path, "prompt: x\nloss:\n  glow: 1\n")
    with pytest.raises(ConfigError, match=r":3: unknown key 'glow' in 'loss'"):
        load_project_config(p)
    p2 = write(tmp_path, "prompt: x\nproviders:\n  proxy: y\n", name="p2.yaml")
    with pytest.raises(ConfigError, match=r":3: unknown key 'proxy' in 'providers'"):
        load_project_config(p2)


def test_unknown_key_inside_reference_entry(tmp_path):
    p = write(
        tmp_path,
        """\
        prompt: x
        inputs:
          references:
            - {azimuth: 0, path: a.png, blur: 2}
        """,
    )
    with pytest.raises(ConfigError, match="unknown key 'blur'"):
        load_project_config(p)


def test_reference_entry_requires_azimuth_and_path(tmp_path):
    p = write(tmp_path, "prompt: x\ninputs:\n  references:\n    - {path: a.png}\n")
    with pytest.raises(ConfigError, match="need azimuth and path"):
        load_project_config(p)


def test_bad_guidance_mode(tmp_path):
    p = write(tmp_path, "prompt: x\nproviders:\n  guidance: psychic\n")
    with pytest.raises(ConfigError, match=r":3: guidance must be one of local, remote, none"):
        load_project_config(p)


def test_remote_guidance_requires_endpoint(tmp_path):
    p = write(tmp_path, "prompt: x\nproviders:\n  guidance: remote\n")
    with pytest.raises(ConfigError, match="remote guidance needs an endpoint"):
        load_project_config(p)
    ok = write(
        tmp_path,
        "prompt: x\nproviders:\n  guidance: remote\n  endpoint: http://h/g\n",
        name="ok.yaml",
    )
    assert load_project_config(ok).providers.endpoint == "http://h/g"


def test_invalid_train_values_become_config_errors(tmp_path):
    p = write(tmp_path, "prompt: x\ntrain:\n  resolutions: [16, 16]\n")
    with pytest.raises(ConfigError, match="resolutions must be three positive sizes"):
        load_project_config(p)


def test_section_must_be_mapping(tmp_path):
    p = write(tmp_path, "prompt: x\ntrain: 5\n")
    with pytest.raises(ConfigError, match=r":2: 'train' must be a mapping"):
        load_project_config(p)


def test_garbage_yaml_reports_parse_failure(tmp_path):
    p = tmp_path / "proj.yaml"
    p.write_text("prompt: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_project_config(p)


def test_init_points_validated(tmp_path):
    p = write(tmp_path, "prompt: x\ninit_points: 0\n")
    with pytest.raises(ConfigError, match=r":2: init_points must be >= 1"):
        load_project_config(p)
