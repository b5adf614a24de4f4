"""Class collapse in deep metric learning: losses, miners, expected objectives."""
