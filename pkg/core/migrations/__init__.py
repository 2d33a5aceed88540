# Empty __init__.py for migrations package
