"""ECA-LP: a homogeneous event-condition-action logic programming engine."""
