"""隨機漫步軌跡中子圖出現門檻的實驗工具。"""
