"""TinySpeech command line and tests."""
