from functools import cached_property
from typing import Any, Dict, List, Self

import pydantic


class BaseModel(pydantic.BaseModel):
    """Base model for every report and configuration object of the package.

    Provides the shared pydantic configuration and the helpers used to turn
    reports into CSV rows and JSON summaries.
    """

    model_config = pydantic.ConfigDict(ignored_types=(cached_property, ),
                                       arbitrary_types_allowed=True,
                                       validate_assignment=True)

    @classmethod
    def from_list(cls, args: List[Dict[str, Any]]) -> List[Self]:
        """Create a list of model instances from a list of dictionaries.

        Args:
            args: A list of dictionaries containing model data.

        Returns:
            A list of model instances initialized with the provided data.

        Examples:
            reports = ErrorReport.from_list([{"quantity": "phi", ...}, ...])
        """
        return [cls(**obj) for obj in args]

    def to_row(self) -> Dict[str, Any]:
        """Flatten the model to a JSON-compatible dict (one CSV row or summary entry)."""
        return self.model_dump(mode="json")
