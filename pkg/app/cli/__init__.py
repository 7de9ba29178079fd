"""Команды командной строки."""
