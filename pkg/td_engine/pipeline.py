import logging
from pathlib import Path
from typing import Optional, TypedDict

from langgraph.graph import END, StateGraph

from .harness import (
    PLOT_FILE,
    Experiment,
    ExperimentConfig,
    ExperimentResult,
    load_experiment,
    simulate,
    write_outputs,
)
from .plotting import emit_plot

logger = logging.getLogger(__name__)


class PipelineState(TypedDict, total=False):
    config: ExperimentConfig
    out_dir: str
    workers: int
    db_path: str
    make_plot: bool
    experiment: Experiment
    rows: list
    result: ExperimentResult
    plot_path: Optional[str]


class ExperimentPipeline:
    """validate -> simulate -> aggregate -> plot, one invocation per sweep."""

    def __init__(self):
        self.workflow = self._build_workflow()

    def _build_workflow(self):
        workflow = StateGraph(PipelineState)

        workflow.add_node("validate", self.validate)
        workflow.add_node("simulate", self.simulate)
        workflow.add_node("aggregate", self.aggregate)
        workflow.add_node("plot", self.plot)

        workflow.set_entry_point("validate")
        workflow.add_edge("validate", "simulate")
        workflow.add_edge("simulate", "aggregate")
        workflow.add_conditional_edges(
            "aggregate", lambda state: "plot" if state.get("make_plot", True) else "done",
            {"plot": "plot", "done": END},
        )
        workflow.add_edge("plot", END)

        return workflow.compile()

    def validate(self, state: PipelineState):
        return {"experiment": load_experiment(state["config"])}

    def simulate(self, state: PipelineState):
        return {"rows": simulate(state["experiment"], workers=state.get("workers", 1))}

    def aggregate(self, state: PipelineState):
        result = write_outputs(
            state["rows"], state["out_dir"], db_path=state.get("db_path", ":memory:")
        )
        return {"result": result}

    def plot(self, state: PipelineState):
        config = state["config"]
        path = emit_plot(
            state["result"].summary, Path(state["out_dir"]) / PLOT_FILE, title=config.name
        )
        return {"plot_path": str(path)}

    def run(self, config: ExperimentConfig, out_dir, workers=1, db_path=":memory:", make_plot=True):
        logger.info("Running sweep %s into %s", config.name, out_dir)
        final = self.workflow.invoke({
            "config": config,
            "out_dir": str(out_dir),
            "workers": workers,
            "db_path": db_path,
            "make_plot": make_plot,
        })
        return final["result"], final.get("plot_path")
