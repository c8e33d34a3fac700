import os
from collections import OrderedDict

import numpy as np
import pytest

_RESULTS: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def _criterion(item):
    mark = item.get_closest_marker("acceptance")
    return None if mark is None else (mark.args[0], mark.args[1])


def pytest_collection_modifyitems(items):
    for item in items:
        crit = _criterion(item)
        if crit is not None:
            _RESULTS.setdefault(crit[0], {"title": crit[1], "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    crit = _criterion(item)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _RESULTS[crit[0]]["outcomes"].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        else:
            status = "PASS" if all(outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def numba_enabled():
    from itdlpcc import _accel

    return _accel.NUMBA_ENABLED and not os.environ.get("ITDLPCC_DISABLE_NUMBA")


# trained toy models shared by the codec, pipeline and acceptance tests

TOY_BLOCK = 16
TOY_LAMBDAS = (0.00025, 0.01)


def _toy_train_config(lmbda):
    from itdlpcc.training import TrainConfig

    # desk-scale settings: narrow model, larger steps, at most 10 epochs
    return TrainConfig(lmbda=lmbda, lr=3e-3, batch=5, max_epochs=10, patience=5, width_factor=8, seed=0)


@pytest.fixture(scope="session")
def toy_blocks():
    from itdlpcc.synthetic import surface_block

    rng = np.random.default_rng(2024)
    train = [surface_block(TOY_BLOCK, rng) for _ in range(50)]
    val = [surface_block(TOY_BLOCK, rng) for _ in range(10)]
    held_out = [surface_block(TOY_BLOCK, rng) for _ in range(4)]
    return train, val, held_out


@pytest.fixture(scope="session")
def trained_codecs(toy_blocks):
    """lambda -> dict(model, result, initial_loss, final_loss, seconds)."""
    import time

    from itdlpcc.codec import CodecArch, CodecModel
    from itdlpcc.training import codec_loss, evaluate, train_codec

    train, val, _ = toy_blocks
    out = {}
    for lmbda in TOY_LAMBDAS:
        cfg = _toy_train_config(lmbda)
        t0 = time.perf_counter()
        model = CodecModel(CodecArch(width_factor=cfg.width_factor), seed=cfg.seed)
        loss_fn = codec_loss(cfg)
        initial = evaluate(model, train, loss_fn, cfg.batch, cfg.seed + 1)
        model, result = train_codec(train, val, cfg, model=model)
        final = evaluate(model, train, loss_fn, cfg.batch, cfg.seed + 1)
        out[lmbda] = {"model": model, "result": result, "initial_loss": initial, "final_loss": final,
                      "seconds": time.perf_counter() - t0, "config": cfg}
    return out


@pytest.fixture(scope="session")
def toy_models(trained_codecs):
    from itdlpcc.codec import model_id_for
    from itdlpcc.pipeline import Models

    lmbda = TOY_LAMBDAS[0]
    return Models(trained_codecs[lmbda]["model"], model_id_for(lmbda))


ABU_SF = 2


@pytest.fixture(scope="session")
def abu_planes():
    from itdlpcc.synthetic import plane_cloud

    rng = np.random.default_rng(99)
    train = [plane_cloud(TOY_BLOCK, rng) for _ in range(24)]
    test = [plane_cloud(TOY_BLOCK, rng) for _ in range(6)]
    return train, test


@pytest.fixture(scope="session")
def trained_abu(abu_planes):
    from itdlpcc.abu import make_abu_blocks, train_abu
    from itdlpcc.training import TrainConfig

    train, _ = abu_planes
    pairs = make_abu_blocks(train, TOY_BLOCK, ABU_SF, min_points=50)
    cfg = TrainConfig(lr=3e-3, batch=4, max_epochs=15, patience=5, width_factor=4, seed=0)
    model, result = train_abu(pairs[:20], ABU_SF, cfg, val=pairs[20:])
    return model, result
