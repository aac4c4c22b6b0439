"""Init test folder."""
