import os
import tempfile

# El log de las pruebas no va al directorio del repo
os.environ.setdefault("LOG_FILE", os.path.join(tempfile.gettempdir(), "hk_engine_tests.log"))
os.environ.setdefault("HK_SEED", "0")
