"""Analysis nodes, workflows, lockfiles and execution."""

from __future__ import annotations

from folkfed.workflow.dag import Dag, Edge, build_dag, select_variant, translation_path
from folkfed.workflow.deps import DependencyConflict, ResolvedDep, parse_registry, resolve_deps, resolve_specs
from folkfed.workflow.lock import LockedDataset, LockedStep, Lockfile, expand_grid, freeze, parse_lockfile
from folkfed.workflow.model import (
    AnalysisNode,
    DepSpec,
    ParamDecl,
    Project,
    ProvidedBy,
    StepDecl,
    Workflow,
    WorkflowRef,
    load_node,
    load_project,
    load_workflow,
    node_quads,
)
from folkfed.workflow.run import BUILTINS, ExecutionError, RunRecord, StepResult, builtin_bin, execute

__all__ = [
    "AnalysisNode",
    "BUILTINS",
    "Dag",
    "DepSpec",
    "DependencyConflict",
    "Edge",
    "ExecutionError",
    "LockedDataset",
    "LockedStep",
    "Lockfile",
    "ParamDecl",
    "Project",
    "ProvidedBy",
    "ResolvedDep",
    "RunRecord",
    "StepDecl",
    "StepResult",
    "Workflow",
    "WorkflowRef",
    "build_dag",
    "builtin_bin",
    "execute",
    "expand_grid",
    "freeze",
    "load_node",
    "load_project",
    "load_workflow",
    "node_quads",
    "parse_lockfile",
    "parse_registry",
    "resolve_deps",
    "resolve_specs",
    "select_variant",
    "translation_path",
]
