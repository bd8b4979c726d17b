"""Joint recognition of manipulation actions, grasp types and object attributes."""
