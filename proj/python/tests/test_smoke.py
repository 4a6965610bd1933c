import numpy as np
import pytest

import imcsca

SMALL = "input 1x8x8\nconv out=4 k=3\npool 2\nfc 12\nfc 4\n"


def test_lenet_tile_split():
    assert imcsca.tiles_per_layer(imcsca.lenet()) == [1, 2, 16, 3, 1]


def test_network_text_round_trips():
    text = imcsca.normalize_network(SMALL)
    assert imcsca.normalize_network(text) == text


def test_config_errors_are_typed():
    assert "attack.share_z" in imcsca.config_keys()
    with pytest.raises(imcsca.ConfigError):
        imcsca.format_config(["tile.nope=3"])
    with pytest.raises(imcsca.Error):
        imcsca.normalize_network("input 1x8x8\nbogus 3\n")


def test_adc_energy_table():
    energy = imcsca.sar_energy_by_code()
    assert len(energy) == 256
    assert max(energy) == energy[0]


def test_simulate_attack_compare(tmp_path):
    net = tmp_path / "small.net"
    net.write_text(SMALL)
    out = tmp_path / "out"
    summary = imcsca.simulate(out, [f"paths.network={net}", "seed=5"])
    assert summary["tiles"] == 3

    trace = imcsca.read_trace(out / "traces" / "tile_000.trace")
    assert trace["tile_id"] == 0
    assert isinstance(trace["samples"], np.ndarray) and trace["samples"].size > 0

    report = tmp_path / "report.txt"
    extracted = imcsca.attack(out / "traces", out / "hardware.conf", report)
    assert extracted == imcsca.normalize_network(extracted)
    mismatches, summary_text = imcsca.compare(report, out / "truth" / "network.net")
    assert mismatches == 0, summary_text

    with pytest.raises(imcsca.ConfigError):
        imcsca.attack(out / "traces", out / "hardware.conf", report, ["seed=3"])


def test_inject_downsamples(tmp_path):
    net = tmp_path / "small.net"
    net.write_text(SMALL)
    out = tmp_path / "out"
    imcsca.simulate(out, [f"paths.network={net}", "seed=5"])
    assert imcsca.inject(out / "traces", tmp_path / "low", target_rate=2e8) == 3
    low = imcsca.read_trace(tmp_path / "low" / "tile_000.trace")
    assert low["sample_rate"] == 2e8
