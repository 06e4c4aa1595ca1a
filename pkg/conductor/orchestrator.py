# tubegrid/conductor/orchestrator.py
"""
Command bodies behind run-tubegrid.py: design, certify, simulate, compare
and batch. Every command returns an exit status; exceptions are mapped
onto the same contract by exit_code_for.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from conductor.config import RunConfig
from conductor.scenario import (certify_config, compare_models, prepare_model, resolve_gains,
                                run_scenario)
from grid.certify import CertificateBundle
from grid.control import GainSet
from grid.errors import (CertificationError, ConfigError, DesignError, EquilibriumError,
                         GainError, IntegratorStateError, NetworkError, SimulationDivergence)
from tools.metrics_collector import MetricsCollector
from tools.report_writer import emit_outputs, write_json, write_text

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CERTIFICATE = 2
EXIT_DIVERGENCE = 3

GAINS_FILE = "gains.json"
CERTIFICATES_JSON = "certificates.json"
CERTIFICATES_TEXT = "certificates.txt"
DESIGN_JSON = "design_report.json"
COMPARE_JSON = "compare_report.json"
DIVERGENCE_JSON = "divergence.json"


def exit_code_for(exc: BaseException) -> int:
    """Exception to exit status"""
    if isinstance(exc, (ConfigError, NetworkError, GainError)):
        return EXIT_USAGE
    if isinstance(exc, (DesignError, CertificationError, EquilibriumError)):
        return EXIT_CERTIFICATE
    if isinstance(exc, (SimulationDivergence, IntegratorStateError)):
        return EXIT_DIVERGENCE
    return EXIT_USAGE


class TubegridOrchestrator:
    """Runs one scenario configuration through the requested command"""

    def __init__(self, config: RunConfig, gains: Optional[GainSet] = None):
        self.config = config
        self.gains = gains
        self.out_dir = Path(config.sim.out_dir)

    def _gains_document(self, gains: GainSet) -> Dict[str, Any]:
        return {"schema_version": 1, "scenario": self.config.name, "gains": gains.to_dict()}

    def _write_bundle(self, bundle: CertificateBundle) -> None:
        write_json(bundle.to_dict(), self.out_dir / CERTIFICATES_JSON)
        table = bundle.summary_table()
        write_text(table + "\n", self.out_dir / CERTIFICATES_TEXT)
        print(table)

    def _resolve(self):
        model = prepare_model(self.config)
        schedule = self.config.reference_schedule(model)
        if self.gains is not None:
            return model, schedule, self.gains, None
        gains, design = resolve_gains(self.config, model, schedule)
        return model, schedule, gains, design

    def cmd_design(self) -> int:
        """Design gains in auto mode, write them with their certificates"""
        if self.config.gains.auto is None:
            raise ConfigError(["gains.auto: the design command needs auto gains"])
        logger.info(f"🔧 DESIGN: {self.config.name}")
        model = prepare_model(self.config)
        schedule = self.config.reference_schedule(model)
        try:
            gains, design = resolve_gains(self.config, model, schedule)
        except DesignError as exc:
            write_json({"schema_version": 1, "passed": False,
                        "certificates": [c.to_dict() for c in exc.certificates]},
                       self.out_dir / DESIGN_JSON)
            for cert in exc.certificates:
                marker = "✅" if cert.passed else "❌"
                logger.error(f"{marker} {cert.name}: margin {cert.margin:.6g}")
            raise

        write_json({"schema_version": 1, **design.to_dict()}, self.out_dir / DESIGN_JSON)
        write_json(self._gains_document(gains), self.out_dir / GAINS_FILE)
        bundle = certify_config(self.config, model, gains, schedule)
        self._write_bundle(bundle)
        if not bundle.passed:
            logger.error("❌ Designed gains failed certification")
            return EXIT_CERTIFICATE
        logger.info(f"✅ Design complete: K={np.round(gains.K, 4).tolist()} "
                    f"K_d={np.round(gains.K_d, 4).tolist()}")
        return EXIT_OK

    def cmd_certify(self) -> int:
        logger.info(f"🔎 CERTIFY: {self.config.name}")
        model, schedule, gains, _ = self._resolve()
        bundle = certify_config(self.config, model, gains, schedule)
        self._write_bundle(bundle)
        return EXIT_OK if bundle.passed else EXIT_CERTIFICATE

    def cmd_simulate(self) -> int:
        logger.info(f"⚡ SIMULATE: {self.config.name}")
        model, schedule, gains, _ = self._resolve()
        try:
            result = run_scenario(self.config, gains=gains)
        except CertificationError as exc:
            if exc.bundle is not None:
                self._write_bundle(exc.bundle)
            raise
        except SimulationDivergence as exc:
            self._dump_divergence(exc)
            raise

        extra = {}
        if result.bundle is not None:
            self._write_bundle(result.bundle)
        if self.config.compare:
            extra["compare_report"] = compare_models(self.config, gains=gains)
        emit_outputs(result.trajectory, result.report, self.out_dir, model=model,
                     stride=self.config.sim.output_stride, extra=extra)
        MetricsCollector(model, gains).print_summary(result.report)
        if not result.report["performance_assessment"]["passed"]:
            return EXIT_CERTIFICATE
        return EXIT_OK

    def cmd_compare(self) -> int:
        logger.info(f"🔁 COMPARE: {self.config.name}")
        _, _, gains, _ = self._resolve()
        try:
            report = compare_models(self.config, gains=gains)
        except SimulationDivergence as exc:
            self._dump_divergence(exc)
            raise
        write_json(report, self.out_dir / COMPARE_JSON)
        return EXIT_OK

    def _dump_divergence(self, exc: SimulationDivergence) -> None:
        state = np.asarray(exc.last_state, dtype=float)
        write_json({
            "schema_version": 1,
            "error": "divergence",
            "message": str(exc),
            "time": exc.time,
            "last_state": np.where(np.isfinite(state), state, 0.0).tolist(),
        }, self.out_dir / DIVERGENCE_JSON)
        logger.error(f"❌ Simulation diverged at t={exc.time:.6g}s; last state saved")

    def run(self, command: str) -> int:
        commands = {
            "design": self.cmd_design,
            "certify": self.cmd_certify,
            "simulate": self.cmd_simulate,
            "compare": self.cmd_compare,
        }
        if command not in commands:
            raise ConfigError([f"command: unknown command {command!r}"])
        return commands[command]()


def run_one(config: RunConfig, command: str, gains: Optional[GainSet] = None) -> int:
    """Run a command and fold any exception into its exit status"""
    try:
        return TubegridOrchestrator(config, gains).run(command)
    except (ConfigError, NetworkError, GainError, DesignError, CertificationError,
            EquilibriumError, SimulationDivergence, IntegratorStateError) as exc:
        logger.error(f"❌ {config.name}: {exc}")
        return exit_code_for(exc)
    except Exception as exc:
        logger.error(f"❌ {config.name} failed: {exc}", exc_info=True)
        return EXIT_USAGE


def run_batch(configs: Sequence[RunConfig], command: str = "simulate",
              workers: int = 4) -> Dict[str, int]:
    """
    Run scenarios concurrently, each into its own sub-directory of its
    out_dir. Returns exit status per scenario name.
    """
    started = time.time()
    prepared: List[RunConfig] = []
    for config in configs:
        out_dir = str(Path(config.sim.out_dir) / config.name)
        prepared.append(config.with_overrides(out_dir=out_dir))
    logger.info(f"🔥 BATCH: {len(prepared)} scenario(s), {workers} worker(s)")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {c.name: pool.submit(run_one, c, command) for c in prepared}
        results = {name: future.result() for name, future in futures.items()}

    failed = [name for name, code in results.items() if code != EXIT_OK]
    marker = "✅" if not failed else "❌"
    logger.info(f"{marker} Batch finished in {time.time() - started:.1f}s; failed: {failed or 'none'}")
    return results
