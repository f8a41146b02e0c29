"""F-KPP solvers, travelling-wave extraction and first-branch laws."""

from bbmlab.fkpp.field import SolutionField, SpaceTimeGrid

__all__ = ["SolutionField", "SpaceTimeGrid"]
