"""Pipeline planning: configs become explicit step DAGs.

Each quality attribute contributes a step chain; steps shared between
attributes (the clean prediction feeds performance, deviation,
robustness and resilience alike) are emitted once and tagged with every
pipeline that needs them.  Plans are pure functions of the config, so
two runs of one config produce identical step ids and dependencies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..core import PerturbationSpec, digest_json
from ..perturb import perturbed_dataset_id
from .config import PipelineConfig


@dataclass
class PlanStep:
    step_id: str
    kind: str  # ensure_dataset | perturb | predict | explain | mask_apply | eval | cost
    role: str  # data | model | xai | eval | coordinator
    depends_on: tuple[str, ...]
    params: dict
    pipelines: set[str] = field(default_factory=set)


@dataclass
class PipelinePlan:
    steps: list[PlanStep]  # topological order

    def __post_init__(self):
        seen: set[str] = set()
        for step in self.steps:
            missing = [d for d in step.depends_on if d not in seen]
            if missing:
                raise ValueError(f"step {step.step_id} depends on unplanned {missing}")
            seen.add(step.step_id)

    def step(self, step_id: str) -> PlanStep:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise KeyError(step_id)

    def __len__(self) -> int:
        return len(self.steps)


def masked_dataset_id(dataset_id: str, model: str, algorithm: str) -> str:
    return "masked-" + digest_json({"dataset": dataset_id, "model": model,
                                    "algorithm": algorithm})[:16]


class _Builder:
    def __init__(self, selected: tuple[str, ...]):
        self.selected = set(selected)
        self.by_id: dict[str, PlanStep] = {}
        self.order: list[str] = []

    def add(self, pipeline: str, step_id: str, kind: str, role: str,
            depends_on: tuple[str, ...] = (), **params) -> str:
        if pipeline not in self.selected:
            return step_id
        if step_id in self.by_id:
            self.by_id[step_id].pipelines.add(pipeline)
        else:
            self.by_id[step_id] = PlanStep(step_id=step_id, kind=kind, role=role,
                                           depends_on=depends_on, params=params,
                                           pipelines={pipeline})
            self.order.append(step_id)
        return step_id

    def build(self) -> PipelinePlan:
        return PipelinePlan([self.by_id[s] for s in self.order])


def plan(config: PipelineConfig) -> PipelinePlan:
    """Expand the config into the dependency-ordered step list."""
    b = _Builder(config.pipelines)

    def deviation_chain(pipeline: str, dataset_id: str, model: str, algorithm: str,
                        predict_step: str, dataset_step: str) -> str:
        """explain -> masked dataset -> masked predict -> deviation eval."""
        masked_id = masked_dataset_id(dataset_id, model, algorithm)
        explain = b.add(pipeline, f"explain:{algorithm}:{model}:{dataset_id}", "explain", "xai",
                        (predict_step,), method=algorithm, model=model, dataset_id=dataset_id,
                        predictions_from=predict_step)
        mask = b.add(pipeline, f"mask:{algorithm}:{model}:{dataset_id}", "mask_apply",
                     "coordinator", (explain, dataset_step),
                     dataset_id=dataset_id, masked_id=masked_id, explain_from=explain)
        masked_predict = b.add(pipeline, f"predict:{model}:{masked_id}", "predict", "model",
                               (mask,), model=model, dataset_id=masked_id)
        return b.add(pipeline, f"eval:deviation:{algorithm}:{model}:{dataset_id}", "eval",
                     "eval", (predict_step, masked_predict), metric="deviation",
                     orig_from=predict_step, masked_from=masked_predict)

    for task in config.tasks:
        ds, model = task.dataset_id, task.model_name
        ds_step = f"dataset:{ds}"
        predict_clean = f"predict:{model}:{ds}"
        for pipeline in config.pipelines:
            b.add(pipeline, ds_step, "ensure_dataset", "data", (), dataset_id=ds)
            b.add(pipeline, predict_clean, "predict", "model", (ds_step,),
                  model=model, dataset_id=ds)

        b.add("performance", f"eval:performance:{model}:{ds}", "eval", "eval",
              (predict_clean,), metric="performance", predictions_from=predict_clean,
              dataset_id=ds, top_n=config.top_n)

        # adversarial fan-out shared by performance, robustness and resilience
        ks_steps_by_kind: dict[str, list[str]] = {}
        for spec in config.perturbations:
            if spec.kind == "identity":
                continue
            adv_id = perturbed_dataset_id(ds, spec)
            label = spec.label()
            perturb_step = f"perturb:{ds}:{label}"
            predict_adv = f"predict:{model}:{adv_id}"
            for pipeline in ("performance", "robustness", "resilience"):
                b.add(pipeline, perturb_step, "perturb", "data", (ds_step,),
                      dataset_id=ds, spec=spec.to_dict(), perturbed_id=adv_id)
                b.add(pipeline, predict_adv, "predict", "model", (perturb_step,),
                      model=model, dataset_id=adv_id)
            b.add("performance", f"eval:performance:{model}:{adv_id}", "eval", "eval",
                  (predict_adv,), metric="performance", predictions_from=predict_adv,
                  dataset_id=adv_id, top_n=config.top_n)
            ks = b.add("robustness", f"eval:ks:{model}:{ds}:{label}", "eval", "eval",
                       (predict_clean, predict_adv), metric="ks",
                       a_from=predict_clean, b_from=predict_adv)
            ks_steps_by_kind.setdefault(spec.kind, []).append(ks)

        for corruption, ks_steps in ks_steps_by_kind.items():
            b.add("robustness", f"eval:robustness:{model}:{ds}:{corruption}", "eval", "eval",
                  tuple(ks_steps), metric="robustness", ks_from=ks_steps,
                  corruption=corruption)

        for algorithm in task.algorithms:
            dev_clean = None
            for pipeline in ("deviation", "resilience", "cost"):
                dev_clean = deviation_chain(pipeline, ds, model, algorithm,
                                            predict_clean, ds_step)
            if "cost" in b.selected:
                chain = [f"predict:{model}:{ds}",
                         f"explain:{algorithm}:{model}:{ds}",
                         f"predict:{model}:{masked_dataset_id(ds, model, algorithm)}",
                         f"eval:deviation:{algorithm}:{model}:{ds}"]
                b.add("cost", f"cost:{algorithm}:{model}:{ds}", "cost", "coordinator",
                      tuple(chain), model=model, algorithm=algorithm, dataset_id=ds,
                      timed_steps=chain)
            if "resilience" in b.selected:
                for spec in config.perturbations:
                    if spec.kind == "identity":
                        continue
                    adv_id = perturbed_dataset_id(ds, spec)
                    label = spec.label()
                    dev_adv = deviation_chain("resilience", adv_id, model, algorithm,
                                              f"predict:{model}:{adv_id}",
                                              f"perturb:{ds}:{label}")
                    b.add("resilience",
                          f"eval:resilience:{algorithm}:{model}:{ds}:{label}", "eval",
                          "eval", (dev_clean, dev_adv), metric="resilience",
                          dev_orig_from=dev_clean, dev_adv_from=dev_adv)
    return b.build()
