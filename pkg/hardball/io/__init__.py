"""hardball io - Record models and JSON / JSONL writers"""
