from pydantic import BaseModel, ConfigDict


class ArrayModel(BaseModel):
    """Базовая схема для объектов, которые несут numpy-массивы и DataFrame."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)
