"""B2F: body-to-face motion generation with style reference."""
