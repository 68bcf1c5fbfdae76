import anyio

from ivserver.tool_server import IvToolServer, calibrate_sync, run_experiment_sync, saturation_sync


def test_calibrate_tool():
    for model in ("probit", "exponential", "logit"):
        result = calibrate_sync(model)
        assert result["ok"] is True, model
        assert result["alpha1"] > 0
        assert abs(result["residual"]) < 1e-8
    centred = calibrate_sync("probit", x_mean=0.0)
    assert centred["ok"] is True and centred["alpha1"] != calibrate_sync("probit")["alpha1"]


def test_calibrate_tool_reports_failures():
    unit = {"sigma_d2": 1.0, "sigma_x1_2": 1.0, "sigma_x2_2": 1.0, "rho_pair": 0.3, "sigma_eps2": 1.0}
    result = calibrate_sync("probit", sigma=unit, first_stage_interact=0.0)
    assert result["ok"] is False
    assert result["error"] == "NoRoot"
    assert result["exit_code"] == 3
    assert calibrate_sync("quadratic")["ok"] is False


def test_run_experiment_tool():
    config = {"dgp": {"kind": "linear_interaction"}, "n_per_rep": 200, "replications": 10, "master_seed": 1}
    result = run_experiment_sync(config, threads=2)
    assert result["ok"] is True
    assert result["summary"]["identified_count"] == 10
    bad = run_experiment_sync({"dgp": {"kind": "linear_interaction"}, "replications": 1})
    assert bad["ok"] is False and bad["exit_code"] == 2


def test_saturation_tool():
    product = saturation_sync({"kind": "linear_interaction"}, n=5000, seed=1)
    assert product["ok"] is True and product["passed"] is False
    missing = saturation_sync({"kind": "linear_interaction"}, {"kind": "excluded", "m": 0}, n=500)
    assert missing["ok"] is False and missing["error"] == "MissingExcluded"


def test_tool_registration():
    server = IvToolServer()
    tools = anyio.run(server.app.list_tools)
    assert {t.name for t in tools} == {"calibrate_alpha_tool", "run_experiment_tool", "saturation_diagnostic"}
