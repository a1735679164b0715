"""Commands package marker for Django custom management commands."""
