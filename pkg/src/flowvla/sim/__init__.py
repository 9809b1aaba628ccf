"""Toy 2-D manipulation simulator, scripted experts, rubrics and commander."""

from .env import ToyEnv, high_level_command, replay
from .expert import Demo, ExpertStuck, OraclePolicy, ScriptedExpert, scripted_expert
from .tasks import TASKS, Checkpoint, Rubric, Task, make_task, score
from .world import (
    LINKS,
    Arm,
    Bin,
    Item,
    UnreachableError,
    World,
    forward_kinematics,
    inverse_kinematics,
    render,
    render_cameras,
    step_world,
)

__all__ = [
    "LINKS", "TASKS", "Arm", "Bin", "Checkpoint", "Demo", "ExpertStuck", "Item", "OraclePolicy",
    "Rubric", "ScriptedExpert", "Task", "ToyEnv", "UnreachableError", "World", "forward_kinematics",
    "high_level_command", "inverse_kinematics", "make_task", "render", "render_cameras", "replay",
    "score", "scripted_expert", "step_world",
]
