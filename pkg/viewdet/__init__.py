import logging

from marshmallow.exceptions import ValidationError

logger = logging.getLogger(__name__)


class SchemaBase:
    class Meta:
        ordered = True

    """Base class for viewdet data types"""

    def validate(self):
        """Validate this object against its schema (for example after changes)"""
        errors = self.Schema().validate(self.dump())
        if errors:
            raise ValidationError(errors)

    def dump(self):
        """Serialize to Python datatypes"""
        return self.__class__.Schema().dump(self)

    def dumps(self, **kwargs):
        """Serialize to json-formatted text"""
        return self.__class__.Schema().dumps(self, **kwargs)
