"""Two-party session harness: wire framing, configuration, privacy amplification."""
