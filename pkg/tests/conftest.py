import pytest
import yaml


def tiny_config(name="tiny", teacher=True, epochs=2):
    net = lambda depth, width: {  # noqa: E731
        "model": {"image_size": 8, "patch_size": 4, "channels": 1, "depth": depth,
                  "width": width, "heads": 2, "mlp_ratio": 2, "num_classes": 3},
        "adapter": {"variant": "parallel", "hidden_dim": 2, "scaling": 0.1},
    }
    return {
        "name": name,
        "seed": 3,
        "epochs": epochs,
        "batch_size": 8,
        "student": net(1, 16),
        "teacher": net(1, 8) if teacher else None,
        "plan": {"loss_kind": "kl" if teacher else "none"},
        "optim": {"base_lr": 5e-3, "warmup_epochs": 1},
        "data": {
            "synthetic": {"num_classes": 3, "samples_per_class": 6, "image_size": 8, "channels": 1},
            "test_samples_per_class": 4,
        },
        "pretext": {"epochs": 1, "lr": 1e-3},
    }


@pytest.fixture
def tiny_yaml(tmp_path):
    def write(**kw):
        cfg = tiny_config(**kw)
        path = tmp_path / f"{cfg['name']}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        return path

    return write


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
