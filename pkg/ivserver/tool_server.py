"""MCP tool server exposing calibration, experiments and diagnostics.

Tools:
- calibrate_alpha(model, sigma, first_stage_interact, x_mean): alpha1 giving a
  unit average partial effect; unset fields take the model's DGP defaults.
- run_experiment(config): replication summary for an experiment config.
- saturation_diagnostic(dgp, instrument, n, seed, bins): binned check of
  E[f_perp | X] = 0 on a simulated sample.

Each tool validates its arguments with the package's pydantic models and runs
the numerical work in a worker thread so the event loop stays responsive.
"""
from typing import Any, Optional

import anyio
import pydantic
from mcp.server.fastmcp import FastMCP
from mcp.server.fastmcp.server import logger

from ivforge import errors
from ivforge.basetypes import DgpSpec, ExperimentConfig, InstrumentSpec, ProductInstrument, SigmaSpec
from ivforge.calibration import calibrate_alpha, calibrate_spec, problem_for_model
from ivforge.dgp import simulate
from ivforge.instruments import build_instrument
from ivforge.montecarlo import run_experiment
from ivforge.numerics import add_intercept, residualize
from ivforge.weak_causality import saturation_test

_dgp_adapter = pydantic.TypeAdapter(DgpSpec)
_instrument_adapter = pydantic.TypeAdapter(InstrumentSpec)


def _failure(exc: Exception) -> dict:
    code = getattr(exc, "exit_code", 2)
    return {"ok": False, "error": type(exc).__name__, "message": str(exc), "exit_code": code}


def calibrate_sync(
    model: str,
    sigma: Optional[dict] = None,
    first_stage_interact: Optional[float] = None,
    x_mean: Optional[float] = None,
) -> dict:
    try:
        spec = SigmaSpec.model_validate(sigma) if sigma is not None else None
        result = calibrate_alpha(problem_for_model(model, spec, first_stage_interact, x_mean))
    except (errors.IvForgeException, pydantic.ValidationError, ValueError) as exc:
        return _failure(exc)
    return {"ok": True, **result.model_dump(mode="json")}


def run_experiment_sync(config: dict, threads: int = 1) -> dict:
    try:
        cfg = ExperimentConfig.model_validate(config)
        cfg = cfg.model_copy(update={"dgp": calibrate_spec(cfg.dgp)})
        report = run_experiment(cfg, threads=threads)
    except (errors.IvForgeException, pydantic.ValidationError) as exc:
        return _failure(exc)
    return {"ok": True, "summary": report.summary.model_dump(mode="json")}


def saturation_sync(dgp: dict, instrument: Optional[dict] = None, n: int = 10_000, seed: int = 0, bins: int = 5) -> dict:
    try:
        spec = calibrate_spec(_dgp_adapter.validate_python(dgp))
        inst = _instrument_adapter.validate_python(instrument) if instrument is not None else ProductInstrument()
        ds = simulate(spec, n, seed)
        f_perp = residualize(build_instrument(inst, ds), add_intercept(ds.x))
        result = saturation_test(f_perp, ds.x, bins)
    except (errors.IvForgeException, pydantic.ValidationError) as exc:
        return _failure(exc)
    return {"ok": True, **result.model_dump(mode="json")}


class IvToolServer:
    def __init__(self) -> None:
        self.app = FastMCP("ivforge")
        self._init_tools()

    def _init_tools(self) -> None:
        @self.app.tool()
        async def calibrate_alpha_tool(model: str, sigma: Optional[dict[str, Any]] = None,
                                       first_stage_interact: Optional[float] = None,
                                       x_mean: Optional[float] = None) -> dict:
            """Solve for alpha1 so the average partial effect of D is one (probit, exponential or logit)."""
            return await anyio.to_thread.run_sync(calibrate_sync, model, sigma, first_stage_interact, x_mean)

        @self.app.tool()
        async def run_experiment_tool(config: dict[str, Any], threads: int = 1) -> dict:
            """Run a Monte Carlo experiment config and return its replication summary."""
            return await anyio.to_thread.run_sync(run_experiment_sync, config, threads)

        @self.app.tool()
        async def saturation_diagnostic(dgp: dict[str, Any], instrument: Optional[dict[str, Any]] = None,
                                        n: int = 10_000, seed: int = 0, bins: int = 5) -> dict:
            """Binned test of E[f_perp | X] = 0 for an instrument on a simulated sample."""
            return await anyio.to_thread.run_sync(saturation_sync, dgp, instrument, n, seed, bins)

    def run(self) -> None:
        """Run the MCP server over stdio."""
        logger.info("Starting ivforge tool server over stdio")
        self.app.run(transport="stdio")


if __name__ == "__main__":
    server = IvToolServer()
    server.run()
